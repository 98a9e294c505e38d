"""Auction domain model and the synthetic market simulator."""

from .types import (
    AD,
    ORGANIC,
    Candidate,
    ConstraintSet,
    DecodeState,
    PageRequest,
    RequestIndex,
    Slate,
    assert_feasible,
    candidate_input_rows,
    check_feasible,
    input_width,
    with_bid,
    without_candidate,
)
from .environment import (
    GroundTruthModel,
    MarketEnvironment,
    build_ground_truth,
    request_seed,
    sample_request,
    simulate_feedback,
    true_list_ctr,
    true_list_cvr,
)
from .logs import (
    LogRecord,
    clicked_subset,
    generate_log_dataset,
    random_feasible_arrangement,
    read_log,
    write_log,
)

__all__ = [
    "AD",
    "ORGANIC",
    "Candidate",
    "ConstraintSet",
    "DecodeState",
    "GroundTruthModel",
    "LogRecord",
    "MarketEnvironment",
    "PageRequest",
    "RequestIndex",
    "Slate",
    "assert_feasible",
    "build_ground_truth",
    "candidate_input_rows",
    "check_feasible",
    "clicked_subset",
    "generate_log_dataset",
    "input_width",
    "random_feasible_arrangement",
    "read_log",
    "request_seed",
    "sample_request",
    "simulate_feedback",
    "true_list_ctr",
    "true_list_cvr",
    "with_bid",
    "without_candidate",
    "write_log",
]
