from .model import (BASES, CIRCUITS, CMP_OPS, DELIVER_STAGE, MESSAGE_KINDS, WILDCARD, Cmp, Free,
                    FreeMsg, Meas, MeasResultMsg, Promote, ProtocolMessage, QCirc, Res, Rule,
                    RuleSet, Send, SetTimer, SetVar, Stage, Timer, TransferMsg, UpdateMsg)
from .text import dump_ruleset
from .validate import Violation, validate_ruleset
from .wire import DecodeError, decode_ruleset, encode_ruleset

__all__ = [
    "BASES", "CIRCUITS", "CMP_OPS", "DELIVER_STAGE", "MESSAGE_KINDS", "WILDCARD",
    "Cmp", "Timer", "Res", "SetTimer", "Promote", "Free", "SetVar", "Meas", "QCirc", "Send",
    "Rule", "Stage", "RuleSet", "ProtocolMessage", "FreeMsg", "UpdateMsg", "MeasResultMsg",
    "TransferMsg", "encode_ruleset", "decode_ruleset", "DecodeError", "validate_ruleset",
    "Violation", "dump_ruleset",
]
