"""Exception hierarchy.

Every error carries enough context (row, column, unit, period) to locate the
problem in the input files without re-running anything.
"""


class DidriversError(Exception):
    """Base class; ``module`` names the subsystem that raised it."""

    module = "didrivers"


# -- panel ------------------------------------------------------------------


class PanelError(DidriversError):
    module = "panel"


class MissingColumn(PanelError):
    def __init__(self, column, table="units.csv"):
        self.column = column
        self.table = table
        super().__init__(f"{table}: required column {column!r} not found")


class NonBinaryGroup(PanelError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"units.csv row {row}: group must be 0 or 1, got {value!r}")


class AsymmetricAdjacency(PanelError):
    def __init__(self, zip_a, zip_b, row=None):
        self.zip_a = zip_a
        self.zip_b = zip_b
        self.row = row
        where = f"adjacency.csv row {row}: " if row is not None else ""
        super().__init__(
            f"{where}zip {zip_a!r} lists {zip_b!r} as neighbor but not vice versa"
        )


class DuplicateUnitPeriod(PanelError):
    def __init__(self, unit, t, m, row):
        self.unit, self.t, self.m, self.row = unit, t, m, row
        super().__init__(f"units.csv row {row}: duplicate record for unit {unit!r} at t={t}, m={m}")


class InconsistentUnit(PanelError):
    def __init__(self, unit, field, row):
        self.unit, self.field, self.row = unit, field, row
        super().__init__(f"units.csv row {row}: unit {unit!r} changes {field} between rows")


class InvalidValue(PanelError):
    def __init__(self, message):
        super().__init__(message)


class PeriodOutOfRange(PanelError):
    def __init__(self, m, n_periods):
        self.m, self.n_periods = m, n_periods
        super().__init__(f"period m={m} outside 1..{n_periods}")


class MissingOutcome(PanelError):
    def __init__(self, unit, t, m, row=None):
        self.unit, self.t, self.m, self.row = unit, t, m, row
        where = f"units.csv row {row}: " if row is not None else ""
        super().__init__(f"{where}missing outcome for unit {unit!r} at t={t}, m={m}")


class UnknownZip(PanelError):
    def __init__(self, zip_id, where):
        self.zip_id = zip_id
        super().__init__(f"{where}: zip {zip_id!r} is not in the zip table")


# -- exposure ---------------------------------------------------------------


class ExposureError(DidriversError):
    module = "exposure"


class NoUntaxedZip(ExposureError):
    def __init__(self):
        super().__init__("no non-taxed zip available for border distance")


class MissingCentroid(ExposureError):
    def __init__(self, zip_id):
        self.zip_id = zip_id
        super().__init__(f"zip {zip_id!r} has no centroid")


class MissingPrice(ExposureError):
    def __init__(self, unit, t, m):
        self.unit, self.t, self.m = unit, t, m
        super().__init__(f"missing price for unit {unit!r} at t={t}, m={m}")


class EmptyNeighborhood(ExposureError):
    def __init__(self, unit):
        self.unit = unit
        super().__init__(f"unit {unit!r} has no priced neighbors")


# -- nuisance ---------------------------------------------------------------


class NuisanceError(DidriversError):
    module = "nuisance"


class SingularDesign(NuisanceError):
    def __init__(self, columns, target=""):
        self.columns = tuple(columns)
        label = f"{target}: " if target else ""
        super().__init__(f"{label}collinear design, offending columns: {', '.join(self.columns)}")


class InsufficientRows(NuisanceError):
    def __init__(self, have, need, target=""):
        self.have, self.need = have, need
        label = f"{target}: " if target else ""
        super().__init__(f"{label}{have} rows available, at least {need} required")


class DegenerateDose(NuisanceError):
    def __init__(self, detail):
        super().__init__(f"degenerate dose: {detail}")


class UnknownLearner(NuisanceError):
    def __init__(self, kind, name):
        self.kind, self.name = kind, name
        super().__init__(f"unknown {kind} learner {name!r}")


# -- estimators -------------------------------------------------------------


class EstimationError(DidriversError):
    module = "estimators"


class BandwidthDegenerate(EstimationError):
    def __init__(self, dim):
        super().__init__(f"dose dimension {dim} has zero spread; bandwidth undefined")


class GridOutsideSupport(EstimationError):
    def __init__(self, dim, lo, hi, grid_lo, grid_hi):
        super().__init__(
            f"grid dimension {dim} spans [{grid_lo:g}, {grid_hi:g}] "
            f"outside observed dose support [{lo:g}, {hi:g}]"
        )


class AttNearZero(EstimationError):
    def __init__(self, att, floor):
        self.att, self.floor = att, floor
        super().__init__(f"|ATT|={abs(att):.3g} below floor {floor:.3g}; REDA undefined")


class PeriodFailure(EstimationError):
    def __init__(self, m, cause):
        self.m, self.cause = m, cause
        super().__init__(f"period m={m}: {cause}")


# -- bootstrap / simlab / config ---------------------------------------------


class BootstrapError(DidriversError):
    module = "bootstrap"


class InvalidSpec(DidriversError):
    module = "simlab"

    def __init__(self, field, reason):
        self.field = field
        super().__init__(f"invalid spec field {field!r}: {reason}")


class ConfigError(DidriversError):
    module = "config"

    def __init__(self, field, reason):
        self.field = field
        super().__init__(f"config field {field!r}: {reason}")
