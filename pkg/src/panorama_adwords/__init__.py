"""Panoramic primal-dual allocation for online budgeted ad auctions."""

from .instance import Instance, generate_instance, load_instance
from .panorama import AdvertiserPanorama, oplus, ominus
from .factor_lp import build_basic_lp, build_hybrid_lp, closed_form_basic, solve
from .allocators import make_allocator, run
from .evaluation import estimate_ratio, offline_opt, verify_panocs_bound

__all__ = ["Instance", "generate_instance", "load_instance", "AdvertiserPanorama", "oplus", "ominus",
           "build_basic_lp", "build_hybrid_lp", "closed_form_basic", "solve", "make_allocator", "run",
           "estimate_ratio", "offline_opt", "verify_panocs_bound"]
