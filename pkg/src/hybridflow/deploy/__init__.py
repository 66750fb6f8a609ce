from .config import (
    Binding,
    BindingError,
    DeploymentConfigError,
    DeploymentPlan,
    EnvironmentSyntaxError,
    Model,
    Resource,
    Service,
    load_environment,
    parse_environment,
    resolve_bindings,
)
from .lifecycle import DeploymentFailed, DeploymentManager
from .scheduler import Scheduler, SchedulingCancelled, select_resources

__all__ = [
    "Binding", "BindingError", "DeploymentConfigError", "DeploymentFailed", "DeploymentManager",
    "DeploymentPlan", "EnvironmentSyntaxError", "Model", "Resource", "Scheduler", "SchedulingCancelled", "Service",
    "load_environment", "parse_environment", "resolve_bindings", "select_resources",
]
