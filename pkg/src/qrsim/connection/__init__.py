from .generator import GeneratorPolicy, LinkPlan, describe_plan, generate_rulesets, link_targets, swap_tree
from .request import (ConnectionRequest, InfeasibleFidelity, LinkInfo, Requirements, SetupError)
from .setup import ConnectionManager, ConnectionRecord, OfflinePlan, plan_offline
from .verifier import Finding, VerifierReport, verify_rulesets, with_discard_timer, with_greedy_swaps

__all__ = [
    "GeneratorPolicy", "LinkPlan", "describe_plan", "generate_rulesets", "link_targets", "swap_tree",
    "ConnectionRequest", "InfeasibleFidelity", "LinkInfo", "Requirements", "SetupError",
    "ConnectionManager", "ConnectionRecord", "OfflinePlan", "plan_offline", "Finding",
    "VerifierReport", "verify_rulesets", "with_discard_timer", "with_greedy_swaps",
]
