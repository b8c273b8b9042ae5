"""Continuous corank-one bundles: exterior differentials, frame flows, loop access and box inclusions."""
from . import access, ballbox, bundle, fields, flows, gallery
from .access import connect, loop_endpoint, shoot_loop, verify_prop22
from .ballbox import BoxSpec, box_membership, verify_inclusions
from .bundle import adapted_frame, estimate_constants, fix_domain, nonintegrability
from .fields import Box, CEDPair, Modulus, OneForm, ScalarField, TwoForm, certify, stokes_residual
from .flows import build_W, compose_T, flow, funnel_probe

__version__ = "0.1.0"
