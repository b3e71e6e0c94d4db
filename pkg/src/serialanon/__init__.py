"""Anonymization of serially published micro-data under a global breach bound."""

from .anonymizer import anonymize_release, audit_release, generalize_qids
from .model import (
    AnonymizedTable,
    GroupConfig,
    LinkageHistory,
    MicroRecord,
    MicroTable,
    PrivacyParams,
    RegistrationList,
    Schema,
    record_release,
)
from .probability import breach_probability, breach_probability_oracle, min_ratio
from .strategy import constant_ratio, geometric_ratio, plan_ratio, ratio_schedule

__all__ = [
    "AnonymizedTable",
    "GroupConfig",
    "LinkageHistory",
    "MicroRecord",
    "MicroTable",
    "PrivacyParams",
    "RegistrationList",
    "Schema",
    "anonymize_release",
    "audit_release",
    "breach_probability",
    "breach_probability_oracle",
    "constant_ratio",
    "generalize_qids",
    "geometric_ratio",
    "min_ratio",
    "plan_ratio",
    "ratio_schedule",
    "record_release",
]
