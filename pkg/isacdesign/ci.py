"""
Constructive-interference (CI) regions and their exact projections.

Every projection here solves

    min_q ||q - center||^2   s.t.   h^T q  lies in the region of symbol s_D

The constraint only sees the image z = h^T q, so each solution moves the
center along conj(h): q = center + delta * conj(h) / ||h||^2, with delta chosen
by enumerating the KKT cases of the region. A case is accepted when its point
is feasible and its multipliers are non-negative, so the enumeration order does
not change the result.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from isacdesign.errors import DomainError
from isacdesign.model import Constellation

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9


class RegionTag(str, Enum):
    PSK_CONE = "PskCone"
    EXACT_A = "ExactA"
    EDGE_B = "EdgeB"
    CORNER_C = "CornerC"
    EDGE_D = "EdgeD"


@dataclass(frozen=True)
class CIRegion:
    tag: RegionTag
    # 1..4 by the sign pattern of the nominal point, for EdgeB/CornerC/EdgeD
    quadrant: Optional[int] = None
    # phi, PskCone only
    half_angle: Optional[float] = None


@dataclass(frozen=True, eq=False)
class CIInstance:
    """
    One projection problem. `center` is the point being projected, in the
    solver that is s - mu_q / rho_q.
    """

    channel: np.ndarray
    symbol: complex
    sinr_threshold: float
    noise_power: float
    region: CIRegion
    center: np.ndarray

    @property
    def threshold(self) -> float:
        return float(np.sqrt(self.sinr_threshold * self.noise_power))

    def with_center(self, center: np.ndarray) -> "CIInstance":
        return replace(self, center=center)


def quadrant_of(symbol: complex) -> int:
    if symbol.real > 0 and symbol.imag > 0:
        return 1
    if symbol.real < 0 and symbol.imag > 0:
        return 2
    if symbol.real < 0 and symbol.imag < 0:
        return 3
    if symbol.real > 0 and symbol.imag < 0:
        return 4
    raise DomainError(f"{symbol} lies on an axis; it has no quadrant")


def classify_point(constellation: Constellation, symbol: complex) -> CIRegion:
    """
    PSK points get the cone. For square QAM, interior points are pinned on
    both axes (A), top/bottom edge points pin the real part (B), left/right
    edge points pin the imaginary part (D) and corners pin neither (C).
    """
    idx = constellation.index_of(symbol)
    if constellation.is_psk:
        return CIRegion(RegionTag.PSK_CONE, half_angle=constellation.half_angle)
    point = constellation.points[idx]
    edge = constellation.levels[-1]
    re_edge = np.isclose(abs(point.real), edge)
    im_edge = np.isclose(abs(point.imag), edge)
    if re_edge and im_edge:
        tag = RegionTag.CORNER_C
    elif im_edge:
        tag = RegionTag.EDGE_B
    elif re_edge:
        tag = RegionTag.EDGE_D
    else:
        return CIRegion(RegionTag.EXACT_A)
    return CIRegion(tag, quadrant=quadrant_of(point))


def _norm2(h: np.ndarray) -> float:
    hh = float(np.real(np.vdot(h, h)))
    if hh == 0:
        raise DomainError("The channel vector is zero")
    return hh


def _lift(inst: CIInstance, delta: complex, hh: float) -> np.ndarray:
    return inst.center + delta * np.conj(inst.channel) / hh


def _tol(*scales: float) -> float:
    return FEASIBILITY_TOL * max(1.0, *[abs(x) for x in scales])


def psk_slacks(z: complex, symbol: complex, threshold: float, half_angle: float):
    """
    Signed slacks (>= 0 when satisfied) of the two cone constraints on the
    received point z, in the frame rotated by the phase of the symbol.
    """
    rotated = np.exp(-1j * np.angle(symbol)) * z
    depth = (rotated.real - threshold * abs(symbol)) * np.tan(half_angle)
    return depth - rotated.imag, depth + rotated.imag


def project_psk(inst: CIInstance, case_order: Iterable[int] = (1, 2, 3, 4)):
    """
    Projection onto the rotated cone

        Im z' <= (Re z' - A) tan(phi),   -Im z' <= (Re z' - A) tan(phi)

    with z' = exp(-j angle(s_D)) h^T q and A = sqrt(Gamma sigma^2) |s_D|.
    Cases: 1 none active, 2 lower edge, 3 upper edge, 4 apex.
    """
    region = inst.region
    if region.tag is not RegionTag.PSK_CONE:
        raise DomainError(f"project_psk called for {region.tag}")
    phi = region.half_angle
    if phi is None or not 0 < phi < np.pi / 2:
        raise DomainError(f"PSK half-angle must lie in (0, pi/2): {phi}")
    hh = _norm2(inst.channel)
    tan_phi = np.tan(phi)
    rotation = np.exp(1j * np.angle(inst.symbol))
    apex = inst.threshold * abs(inst.symbol)
    u = (inst.channel @ inst.center) / rotation
    tol = _tol(apex, u)

    def candidate(case: int) -> Tuple[complex, float, float]:
        # Returns (shift of z', lambda_upper, lambda_lower)
        if case == 1:
            return 0.0, 0.0, 0.0
        if case == 2:
            gap = apex * tan_phi - np.real((tan_phi - 1j) * u)
            return gap / (tan_phi - 1j), 0.0, 2 * gap / ((tan_phi ** 2 + 1) * hh)
        if case == 3:
            gap = apex * tan_phi - np.real((tan_phi + 1j) * u)
            return gap / (tan_phi + 1j), 2 * gap / ((tan_phi ** 2 + 1) * hh), 0.0
        if case == 4:
            shift = apex - u
            # delta = (lam_up (tan - j) + lam_low (tan + j)) ||h||^2 / 2
            system = np.array([[tan_phi, tan_phi], [-1.0, 1.0]]) * hh / 2
            lam_up, lam_low = np.linalg.solve(system, [shift.real, shift.imag])
            return shift, lam_up, lam_low
        raise DomainError(f"Unknown PSK case {case}")

    fallback = None
    for case in case_order:
        shift, lam_up, lam_low = candidate(case)
        upper, lower = psk_slacks(
            (u + shift) * rotation, inst.symbol, inst.threshold, phi
        )
        violation = max(-upper, -lower, -lam_up * hh, -lam_low * hh, 0.0)
        if violation <= tol:
            return _lift(inst, shift * rotation, hh)
        if fallback is None or violation < fallback[0]:
            fallback = (violation, shift)
    logger.warning(f"No PSK KKT case within tolerance, best violation {fallback[0]}")
    return _lift(inst, fallback[1] * rotation, hh)


def qam_slacks(z: complex, symbol: complex, threshold: float, region: CIRegion):
    """
    Signed slacks of the QAM region constraints on z; pinned coordinates
    contribute minus their absolute residual.
    """
    target = threshold * symbol
    re_gap = z.real - target.real
    im_gap = z.imag - target.imag
    re_side = np.sign(symbol.real) * re_gap
    im_side = np.sign(symbol.imag) * im_gap
    if region.tag is RegionTag.EXACT_A:
        return -abs(re_gap), -abs(im_gap)
    if region.tag is RegionTag.EDGE_B:
        return -abs(re_gap), im_side
    if region.tag is RegionTag.EDGE_D:
        return re_side, -abs(im_gap)
    if region.tag is RegionTag.CORNER_C:
        return re_side, im_side
    raise DomainError(f"{region.tag} is not a QAM region")


def _qam_branches(inst: CIInstance, expected: RegionTag, branches, order):
    region = inst.region
    if region.tag is not expected:
        raise DomainError(f"Projection for {expected} called with {region.tag}")
    hh = _norm2(inst.channel)
    z = complex(inst.channel @ inst.center)
    target = inst.threshold * inst.symbol
    sign = complex(np.sign(inst.symbol.real), np.sign(inst.symbol.imag))
    tol = _tol(z, target)
    gap = target - z

    fallback = None
    for key in order:
        pin_re, pin_im = branches[key]
        shift = complex(gap.real if pin_re else 0.0, gap.imag if pin_im else 0.0)
        # Multipliers of the one-sided bounds that this branch activates
        multipliers = []
        if pin_re and region.tag in (RegionTag.EDGE_D, RegionTag.CORNER_C):
            multipliers.append(sign.real * gap.real)
        if pin_im and region.tag in (RegionTag.EDGE_B, RegionTag.CORNER_C):
            multipliers.append(sign.imag * gap.imag)
        slacks = qam_slacks(z + shift, inst.symbol, inst.threshold, region)
        violation = max([-x for x in slacks] + [-m for m in multipliers] + [0.0])
        if violation <= tol:
            return _lift(inst, shift, hh)
        if fallback is None or violation < fallback[0]:
            fallback = (violation, shift)
    logger.warning(f"No QAM KKT branch within tolerance, best violation {fallback[0]}")
    return _lift(inst, fallback[1], hh)


def project_qam_A(inst: CIInstance) -> np.ndarray:
    """h^T q = sqrt(Gamma sigma^2) s_D, minimum distance from the center."""
    return _qam_branches(inst, RegionTag.EXACT_A, {"pin": (True, True)}, ["pin"])


_EDGE_BRANCHES: Dict[str, Tuple[bool, bool]] = {
    "free": (False, False),
    "pin_re": (True, False),
    "pin_im": (False, True),
    "pin_both": (True, True),
}


def project_qam_B(inst: CIInstance) -> np.ndarray:
    """Real part pinned, imaginary part bounded away from the origin."""
    return _qam_branches(
        inst, RegionTag.EDGE_B, _EDGE_BRANCHES, ["pin_re", "pin_both"]
    )


def project_qam_D(inst: CIInstance) -> np.ndarray:
    """Imaginary part pinned, real part bounded away from the origin."""
    return _qam_branches(
        inst, RegionTag.EDGE_D, _EDGE_BRANCHES, ["pin_im", "pin_both"]
    )


def project_qam_C(
    inst: CIInstance,
    order: Iterable[str] = ("free", "pin_im", "pin_re", "pin_both"),
) -> np.ndarray:
    """Both parts bounded away from the origin."""
    return _qam_branches(inst, RegionTag.CORNER_C, _EDGE_BRANCHES, list(order))


_PROJECTIONS = {
    RegionTag.PSK_CONE: project_psk,
    RegionTag.EXACT_A: project_qam_A,
    RegionTag.EDGE_B: project_qam_B,
    RegionTag.CORNER_C: project_qam_C,
    RegionTag.EDGE_D: project_qam_D,
}


def project(inst: CIInstance) -> np.ndarray:
    return _PROJECTIONS[inst.region.tag](inst)


def region_slacks(
    z: complex, symbol: complex, threshold: float, region: CIRegion
) -> Tuple[float, float]:
    if region.tag is RegionTag.PSK_CONE:
        return psk_slacks(z, symbol, threshold, region.half_angle)
    return qam_slacks(z, symbol, threshold, region)


def project_image(
    z: complex, symbol: complex, threshold: float, region: CIRegion
) -> complex:
    """Projection of a received point itself (unit scalar channel)."""
    inst = CIInstance(
        channel=np.ones(1),
        symbol=symbol,
        sinr_threshold=threshold ** 2,
        noise_power=1.0,
        region=region,
        center=np.array([z], dtype=complex),
    )
    return complex(project(inst)[0])


def instances_for(scenario) -> List[CIInstance]:
    """One template per communication symbol of `scenario`, centered at zero."""
    n = scenario.num_variables
    return [
        CIInstance(
            channel=h,
            symbol=complex(symbol),
            sinr_threshold=scenario.sinr_threshold,
            noise_power=scenario.noise_power,
            region=classify_point(scenario.constellation, symbol),
            center=np.zeros(n, dtype=complex),
        )
        for h, symbol in zip(scenario.channels, scenario.symbols)
    ]
