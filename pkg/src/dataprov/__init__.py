"""Blockchain-style provenance tracking with verified, incentivized voting."""

from .chain import DEFAULT_GAS, GasSchedule, Ledger
from .crypto import RealCrypto, TestCrypto, get_profile
from .scenario import ScenarioConfig, load_config, run_scenario
from .tracker import DocumentTracker
from .voting import VoteContract, VotingConfig, VotingParams

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_GAS", "GasSchedule", "Ledger", "RealCrypto", "TestCrypto", "get_profile",
    "ScenarioConfig", "load_config", "run_scenario", "DocumentTracker",
    "VoteContract", "VotingConfig", "VotingParams",
]
