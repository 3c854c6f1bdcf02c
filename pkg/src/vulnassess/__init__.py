"""Vulnerability severity assessment from C functions.

Pipeline: parse a function into a program dependence graph (:mod:`.pdg`),
slice it around points of interest (:mod:`.slicer`), ask an LLM for a
vulnerability intention report (:mod:`.vir`), then classify severity and
pick a repair suggestion with a prompt-tuned surrogate model
(:mod:`.assessor`, trained by :mod:`.trainer`).  :mod:`.dataset` and
:mod:`.evaluation` cover data handling and metrics; :mod:`.cli` wires it up.
"""
from .assessor import Assessment, HybridPrompt, ModelParams, assess
from .errors import VulnAssessError
from .pdg import build_pdg, parse_function, parse_source
from .slicer import PoiConfig, build_idg, find_pois, slice_function
from .vir import MockProvider, ProviderConfig, Vir, VirGenerator

__all__ = ["Assessment", "HybridPrompt", "ModelParams", "assess", "VulnAssessError",
           "build_pdg", "parse_function", "parse_source", "PoiConfig", "build_idg",
           "find_pois", "slice_function", "MockProvider", "ProviderConfig", "Vir",
           "VirGenerator"]
__version__ = "0.1.0"
