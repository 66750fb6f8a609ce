def estimate_makespan(variants: int, hours: float, slots: int) -> float:
    """Hours to run ``variants`` equal jobs of ``hours`` each on ``slots`` concurrent slots.

    With identical durations list scheduling is optimal, so the makespan is
    ``ceil(variants / slots) * hours``: 990 jobs of 15 h take 15 h on 990
    slots and 14850 h (about 1.7 years) on a single slot.
    """
    if variants < 0:
        raise ValueError("variants must be >= 0")
    if hours <= 0:
        raise ValueError("hours must be > 0")
    if slots < 1:
        raise ValueError("slots must be >= 1")
    waves = -(-variants // slots)
    return waves * float(hours)
