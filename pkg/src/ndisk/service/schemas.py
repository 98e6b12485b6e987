"""Pydantic request/response models for the compute service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field

from .. import flow, geometry, orbits, spectral


class DiscModel(BaseModel):
    center: tuple[float, float]
    radius: float = Field(gt=0)


class TolerancesModel(BaseModel):
    grazing_tol: float = geometry.GRAZING_TOL
    newton_tol: float = 1e-12


class StateModel(BaseModel):
    x: tuple[float, float]
    v: tuple[float, float]

    def to_domain(self) -> flow.PhaseState:
        return flow.PhaseState.of(self.x, self.v)

    @classmethod
    def from_domain(cls, state: flow.PhaseState) -> "StateModel":
        return cls(x=(float(state.x[0]), float(state.x[1])),
                   v=(float(state.v[0]), float(state.v[1])))


class HorizonModel(BaseModel):
    kind: str = Field(pattern="^(time|bounces|escape)$")
    value: float

    def to_domain(self) -> flow.Horizon:
        if self.kind == "time":
            return flow.Time(self.value)
        if self.kind == "bounces":
            return flow.Bounces(int(self.value))
        return flow.EscapeRadius(self.value)


class WeightModel(BaseModel):
    re: str = "1"
    im: Optional[str] = None
    reflection_factor: tuple[float, float] = (1.0, 0.0)

    def to_domain(self) -> "spectral.Weight":
        from ..weights import Weight

        return Weight.parse(self.re, self.im,
                            complex(self.reflection_factor[0], self.reflection_factor[1]))


class ZetaConfigModel(BaseModel):
    max_len: int = Field(8, ge=2)
    max_rep: int = Field(200, ge=1)
    tail_tol: float = 1e-16

    def to_domain(self) -> spectral.ZetaConfig:
        return spectral.ZetaConfig(self.max_len, self.max_rep, self.tail_tol)


class RegionModel(BaseModel):
    re_min: float
    re_max: float
    im_min: float
    im_max: float

    def to_domain(self) -> spectral.Region:
        return spectral.Region(self.re_min, self.re_max, self.im_min, self.im_max)


# --- geometry-check ---------------------------------------------------------

class GeometryCheckRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)


class GeometryCheckResponse(BaseModel):
    disjoint_ok: bool
    no_eclipse_ok: bool
    violations: list[tuple[int, int, int]]
    first_violation: Optional[str] = None
    set_hash: Optional[str] = None


# --- simulate ----------------------------------------------------------------

class SimulateRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)
    state: StateModel
    until: HorizonModel
    tolerances: TolerancesModel = TolerancesModel()
    r_dom: Optional[float] = None


class CollisionModel(BaseModel):
    time: float
    obstacle: int  # 1-based label
    point: tuple[float, float]
    incoming_v: tuple[float, float]
    outgoing_v: tuple[float, float]
    cos_incidence: float


class SimulateResponse(BaseModel):
    final: StateModel
    elapsed: float
    termination: str
    collisions: list[CollisionModel]

    @classmethod
    def from_domain(cls, result: flow.FlowResult) -> "SimulateResponse":
        return cls(
            final=StateModel.from_domain(result.final),
            elapsed=result.elapsed,
            termination=result.termination.value,
            collisions=[
                CollisionModel(
                    time=c.time,
                    obstacle=c.obstacle + 1,
                    point=(float(c.point[0]), float(c.point[1])),
                    incoming_v=(float(c.incoming_v[0]), float(c.incoming_v[1])),
                    outgoing_v=(float(c.outgoing_v[0]), float(c.outgoing_v[1])),
                    cos_incidence=c.cos_incidence,
                )
                for c in result.collisions
            ],
        )


# --- orbits --------------------------------------------------------------------

class OrbitsRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)
    max_len: int = Field(ge=2)
    tolerances: TolerancesModel = TolerancesModel()


class OrbitRowModel(BaseModel):
    itinerary: str
    thetas: list[float]
    T_prim: float
    trace: float
    Lambda: float
    abs_Lambda: float
    lyapunov: float
    residual: float
    set_hash: str


class OrbitsResponse(BaseModel):
    set_hash: str
    max_len: int
    newton_tol: float
    grazing_tol: float
    orbits: list[OrbitRowModel]
    pruned: dict[str, str]
    failed: dict[str, str]
    counts_by_length: dict[int, dict[str, int]]

    @classmethod
    def from_domain(cls, db: orbits.OrbitDb) -> "OrbitsResponse":
        rows = []
        for label in sorted(db.entries):
            orbit = db.entries[label]
            rows.append(OrbitRowModel(
                itinerary=label,
                thetas=[float(t) for t in orbit.thetas],
                T_prim=orbit.T_prim,
                trace=orbit.hyp.trace,
                Lambda=orbit.hyp.Lambda,
                abs_Lambda=abs(orbit.hyp.Lambda),
                lyapunov=orbit.hyp.lyapunov,
                residual=orbit.newton_residual,
                set_hash=db.set_hash,
            ))
        return cls(
            set_hash=db.set_hash,
            max_len=db.max_len,
            newton_tol=db.newton_tol,
            grazing_tol=db.grazing_tol,
            orbits=rows,
            pruned=db.pruned,
            failed=db.failed,
            counts_by_length=db.counts_by_length(),
        )


# --- spectral -------------------------------------------------------------------

class ZetaEvalRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)
    lam: tuple[float, float]
    weight: WeightModel = WeightModel()
    zeta: ZetaConfigModel = ZetaConfigModel()
    tolerances: TolerancesModel = TolerancesModel()


class ZetaEvalResponse(BaseModel):
    lam: tuple[float, float]
    zeta: tuple[float, float]
    determinant: tuple[float, float]
    orbit_count: int


class ResonancesRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)
    region: RegionModel
    zeta: ZetaConfigModel = ZetaConfigModel()
    tolerances: TolerancesModel = TolerancesModel()
    rng_seed: int = 0
    dump_grid: Optional[tuple[int, int]] = None


class ResonanceModel(BaseModel):
    re: float
    im: float
    residue_re: float
    residue_im: float
    residual: float
    stable: bool
    multiplicity: int

    @classmethod
    def from_domain(cls, r: spectral.Resonance) -> "ResonanceModel":
        return cls(re=r.lambda0.real, im=r.lambda0.imag,
                   residue_re=r.residue_Z1.real, residue_im=r.residue_Z1.imag,
                   residual=r.newton_residual, stable=r.stable_across_truncation,
                   multiplicity=r.multiplicity)


class DetSampleModel(BaseModel):
    re: float
    im: float
    det_re: float
    det_im: float


class ResonancesResponse(BaseModel):
    resonances: list[ResonanceModel]
    any_stable: bool
    det_grid: Optional[list[DetSampleModel]] = None


class ResolventRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)
    lam: tuple[float, float]
    weight: WeightModel = WeightModel()
    weight_g: Optional[WeightModel] = None
    r_dom: Optional[float] = None
    dt: float = 0.25
    n_samples: int = Field(500, ge=1)
    identity_states: int = Field(0, ge=0)
    rng_seed: int = 0


class ResolventResponse(BaseModel):
    matrix_coefficient: tuple[float, float]
    stderr: float
    n_samples: int
    identity_defects_max: Optional[float] = None
    identity_defects_mean: Optional[float] = None
    identity_threshold: float = 1e-3
    identity_ok: Optional[bool] = None


class TrappedSetRequest(BaseModel):
    discs: list[DiscModel] = Field(min_length=1)
    n_s: int = Field(40, ge=2)
    n_p: int = Field(25, ge=2)
    n_bounce: int = Field(12, ge=1)
    r_dom: Optional[float] = None
    tolerances: TolerancesModel = TolerancesModel()


class TrappedSetResponse(BaseModel):
    domain_radius: float
    n_s: int
    n_p: int
    n_bounce: int
    gamma_plus: list[list[list[bool]]]
    gamma_minus: list[list[list[bool]]]
    trapped: list[list[list[bool]]]
    trapped_cell_count: int
