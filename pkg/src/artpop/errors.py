"""Exception types raised across the package.

All of them subclass ``ValueError`` so callers that only care about bad
input can catch one thing.
"""


class ArtpopError(ValueError):
    pass


class MissingColumn(ArtpopError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class ParseFailure(ArtpopError):
    def __init__(self, row, column, value=None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"cannot parse row {row}, column {column!r}: {value!r}")


class DuplicateUnitId(ArtpopError):
    def __init__(self, unit_id):
        self.unit_id = unit_id
        super().__init__(f"duplicate id {unit_id}")


class SchemaValidationError(ArtpopError):
    def __init__(self, report):
        self.report = report
        msgs = "; ".join(f"row {r}, {c}: {v}" for r, c, v in report.errors[:5])
        super().__init__(f"frame rejected ({len(report.errors)} errors): {msgs}")


class NonPositiveLogArgument(ArtpopError):
    def __init__(self, variable, row):
        self.variable = variable
        self.row = row
        super().__init__(f"log argument <= 0 for {variable!r} at row {row}")


class ZeroVariance(ArtpopError):
    def __init__(self, stratum, variable):
        self.stratum = stratum
        self.variable = variable
        super().__init__(f"zero variance for {variable!r} in stratum {stratum!r}")


class MissingConstants(ArtpopError):
    def __init__(self, stratum, variable):
        self.stratum = stratum
        self.variable = variable
        super().__init__(f"no scaling constants for {variable!r} in stratum {stratum!r}")


class TooFewDonors(ArtpopError):
    def __init__(self, n_donors, k, stratum=None):
        self.n_donors = n_donors
        self.k = k
        self.stratum = stratum
        where = f" in stratum {stratum!r}" if stratum is not None else ""
        super().__init__(f"{n_donors} donors{where}, need at least k={k}")


class DimensionMismatch(ArtpopError):
    pass


class LengthMismatch(ArtpopError):
    pass


class EmptyCluster(ArtpopError):
    def __init__(self, cluster_id):
        self.cluster_id = cluster_id
        super().__init__(f"cluster {cluster_id} has no slots")


class RankDeficientDesign(ArtpopError):
    pass


class TooFewDomains(ArtpopError):
    pass


class ZeroTruth(ArtpopError):
    def __init__(self, domain):
        self.domain = domain
        super().__init__(f"true mean is zero in domain {domain!r}")


class DegenerateMSE(ArtpopError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"empirical MSE is zero for {key!r}")


class MissingVariable(ArtpopError):
    def __init__(self, variable):
        self.variable = variable
        super().__init__(f"variable {variable!r} not present")


class ProvenanceMissing(ArtpopError):
    pass


class ConfigError(ArtpopError):
    pass
