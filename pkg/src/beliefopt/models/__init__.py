from beliefopt.models.inference_models import (
    STATUSES,
    TRACE_HEADER,
    Beliefs,
    ExactResult,
    SolveReport,
    TraceRow,
)

__all__ = ["Beliefs", "ExactResult", "SolveReport", "TraceRow", "TRACE_HEADER", "STATUSES"]
