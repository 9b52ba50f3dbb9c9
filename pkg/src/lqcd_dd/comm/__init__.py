"""Communication hiding: schedules, a timeline simulator and in-process ranks."""
from .multirank import (DeadlockError, MessageError, MultirankResult, RankEnsemble, Recv, Send,
                        run_multirank)
from .schedule import (CommSchedule, ScheduleError, SendEvent, build_schedule, replace_send,
                       validate_schedule)
from .timeline import (BANDWIDTH, LATENCY, Timeline, TimelineEvent, bandwidth_threshold,
                       simulate_timeline, window_time)

__all__ = [
    "BANDWIDTH", "CommSchedule", "DeadlockError", "LATENCY", "MessageError", "MultirankResult",
    "RankEnsemble", "Recv", "ScheduleError", "Send", "SendEvent", "Timeline", "TimelineEvent",
    "bandwidth_threshold", "build_schedule", "replace_send", "run_multirank", "simulate_timeline", "validate_schedule", "window_time",
]
