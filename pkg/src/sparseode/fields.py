"""Parameterized ODE field families for chemical kinetics.

Four families are provided, all with fixed integer exponent structure and a
flat estimable parameter vector ``theta``:

* ``MassActionField``   dx/dt = (B - A)^T diag(x^A) k          theta = k, length R
* ``PowerLawField``     dx/dt = theta x^A                      theta d x r, row-major
* ``RationalLawField``  dx/dt = theta (x^A / (1 + x^B))        theta d x r, row-major
* ``RationalMassActionField``
                        dx/dt = C^T (theta1 x^A / (1 + theta2 x^A))
                        theta = (theta1.ravel(), theta2.ravel()), length 2*r*b

Monomials x^a use the convention 0**0 = 1.  Exponents are non-negative
integers; real-valued exponents are rejected at construction.
"""

import io

import numpy as np

from .errors import DimensionError, DomainError, SchemaError, SpecificationError
from .validation import as_exponent_matrix, as_float_vector, check_state

__all__ = [
    "StoichiometrySpec",
    "MassActionField",
    "PowerLawField",
    "RationalLawField",
    "RationalMassActionField",
    "apply_environment",
    "lotka_volterra_space",
    "enzyme_space",
    "enzyme_catalytic_space",
    "rational_first_order_space",
    "transfer_complex_space",
    "search_space",
    "dump_field",
    "load_field",
]


def _monomials(X, A):
    """Evaluate x^{A_r} for every row of X; X is (m, d), A is (r, d) -> (m, r)."""
    return np.prod(X[:, None, :] ** A[None, :, :], axis=2)


def _monomial_jacobian(X, A):
    """Partial derivatives of the monomials x^{A_r} w.r.t. x -> (m, r, d).

    Uses prefix/suffix products so that states with zero coordinates never
    trigger a division.  d(x^a)/dx_i = a_i x_i^{a_i-1} prod_{j != i} x_j^{a_j},
    with the term equal to zero whenever a_i = 0.
    """
    m, d = X.shape
    r = A.shape[0]
    P = X[:, None, :] ** A[None, :, :]  # (m, r, d)
    left = np.ones((m, r, d))
    right = np.ones((m, r, d))
    if d > 1:
        left[:, :, 1:] = np.cumprod(P[:, :, :-1], axis=2)
        right[:, :, :-1] = np.cumprod(P[:, :, :0:-1], axis=2)[:, :, ::-1]
    a = A[None, :, :]
    dpow = np.where(a > 0, a * X[:, None, :] ** np.maximum(a - 1, 0), 0.0)
    return dpow * left * right


class StoichiometrySpec:
    """Reactant (A) and product (B) coefficient matrices of a reaction set.

    Both are R x d non-negative integer matrices; row r describes one
    reaction and its net change is ``B[r] - A[r]``.  Reactions with zero net
    change (A_r == B_r) are rejected because they are unidentifiable.
    """

    def __init__(self, A, B, species_names=None, reaction_names=None):
        self.A = as_exponent_matrix(A, "A")
        self.B = as_exponent_matrix(B, "B")
        if self.A.shape != self.B.shape:
            raise DimensionError(
                f"A and B must have identical shapes, got {self.A.shape} and {self.B.shape}"
            )
        null_rows = np.flatnonzero(np.all(self.A == self.B, axis=1))
        if null_rows.size:
            raise SpecificationError(
                f"reactions {null_rows.tolist()} have A_r == B_r (zero net change)"
            )
        self.n_reactions, self.n_species = self.A.shape
        if species_names is None:
            species_names = tuple(f"X{i + 1}" for i in range(self.n_species))
        if len(species_names) != self.n_species:
            raise DimensionError("species_names length does not match the matrices")
        self.species_names = tuple(species_names)
        if reaction_names is None:
            reaction_names = tuple(
                self._reaction_string(r) for r in range(self.n_reactions)
            )
        if len(reaction_names) != self.n_reactions:
            raise DimensionError("reaction_names length does not match the matrices")
        self.reaction_names = tuple(reaction_names)
        self.net = (self.B - self.A).astype(float)

    def _side_string(self, coeffs):
        terms = []
        for i, c in enumerate(coeffs):
            if c == 1:
                terms.append(self.species_names[i])
            elif c > 1:
                terms.append(f"{c}{self.species_names[i]}")
        return "+".join(terms) if terms else "0"

    def _reaction_string(self, r):
        return f"{self._side_string(self.A[r])}->{self._side_string(self.B[r])}"

    def subset(self, rows):
        rows = list(rows)
        return StoichiometrySpec(
            self.A[rows],
            self.B[rows],
            self.species_names,
            tuple(self.reaction_names[r] for r in rows),
        )

    def __eq__(self, other):
        return (
            isinstance(other, StoichiometrySpec)
            and np.array_equal(self.A, other.A)
            and np.array_equal(self.B, other.B)
            and self.species_names == other.species_names
        )


class FieldModel:
    """Common interface of the four field families.

    Instances are immutable after construction and safe to share across
    concurrent evaluations; every operation is a pure function of its inputs.
    """

    family = None
    linear_in_params = None

    # subclasses set: n_species, n_params, species_names

    def _check_theta(self, theta):
        theta = as_float_vector(theta, "theta")
        if theta.shape[0] != self.n_params:
            raise DimensionError(
                f"theta must have length {self.n_params}, got {theta.shape[0]}"
            )
        return theta

    def eval_field(self, theta, x):
        theta = self._check_theta(theta)
        x = check_state(x, self.n_species)
        return self._eval(theta, x[None, :])[0]

    def eval_field_grid(self, theta, X):
        """Vectorized field evaluation over rows of X (m, d) -> (m, d)."""
        theta = self._check_theta(theta)
        return self._eval(theta, np.asarray(X, dtype=float))

    def jacobian_x(self, theta, x):
        theta = self._check_theta(theta)
        x = check_state(x, self.n_species)
        return self._jac_x(theta, x)

    def jacobian_theta(self, theta, x):
        theta = self._check_theta(theta)
        x = check_state(x, self.n_species)
        return self._jac_theta(theta, x[None, :])[0]

    def jacobian_theta_grid(self, theta, X):
        """Vectorized parameter Jacobian over rows of X (m, d) -> (m, d, p)."""
        theta = self._check_theta(theta)
        return self._jac_theta(theta, np.asarray(X, dtype=float))

    def default_box(self):
        """Per-coordinate (lower, upper) bounds natural to the family."""
        p = self.n_params
        return np.full(p, -np.inf), np.full(p, np.inf)

    def species_param_mask(self):
        """Boolean (d, p) mask: does f_l depend structurally on theta_j."""
        raise NotImplementedError

    def edges_for_support(self, support):
        """Directed network edges (from, to) induced by the active parameters."""
        raise NotImplementedError

    def candidate_edges(self):
        return self.edges_for_support(range(self.n_params))

    def param_names(self):
        return tuple(f"theta[{j}]" for j in range(self.n_params))

    def restricted(self, support):
        """Field over the reduced parameter vector theta[support]."""
        return _RestrictedField(self, support)


class MassActionField(FieldModel):
    """Mass action kinetics: dx/dt = (B - A)^T diag(x^A) k with rates k >= 0."""

    family = "mak"
    linear_in_params = True

    def __init__(self, stoichiometry):
        self.stoichiometry = stoichiometry
        self.n_species = stoichiometry.n_species
        self.n_params = stoichiometry.n_reactions
        self.species_names = stoichiometry.species_names

    def _eval(self, k, X):
        M = _monomials(X, self.stoichiometry.A)
        return (M * k[None, :]) @ self.stoichiometry.net

    def _jac_x(self, k, x):
        dM = _monomial_jacobian(x[None, :], self.stoichiometry.A)[0]  # (R, d)
        return np.einsum("ri,r,rj->ij", self.stoichiometry.net, k, dM)

    def _jac_theta(self, k, X):
        M = _monomials(X, self.stoichiometry.A)  # (m, R)
        return np.einsum("mr,ri->mir", M, self.stoichiometry.net)

    def default_box(self):
        return np.zeros(self.n_params), np.full(self.n_params, np.inf)

    def species_param_mask(self):
        return (self.stoichiometry.net != 0).T

    def edges_for_support(self, support):
        A, net = self.stoichiometry.A, self.stoichiometry.net
        edges = set()
        for r in support:
            sources = np.flatnonzero(A[r] > 0)
            targets = np.flatnonzero(net[r] != 0)
            edges.update((int(l), int(i)) for l in sources for i in targets)
        return edges

    def param_names(self):
        return self.stoichiometry.reaction_names

    def restricted(self, support):
        # reduced coordinates follow sorted(support), matching _RestrictedField
        return MassActionField(self.stoichiometry.subset(sorted(int(j) for j in support)))


class PowerLawField(FieldModel):
    """Power law kinetics: dx/dt = theta x^A, theta is d x r flattened row-major."""

    family = "plk"
    linear_in_params = True

    def __init__(self, A, species_names=None):
        self.A = as_exponent_matrix(A, "A")
        self.n_monomials, self.n_species = self.A.shape
        self.n_params = self.n_species * self.n_monomials
        if species_names is None:
            species_names = tuple(f"X{i + 1}" for i in range(self.n_species))
        self.species_names = tuple(species_names)

    def _coef(self, theta):
        return theta.reshape(self.n_species, self.n_monomials)

    def _basis(self, X):
        return _monomials(X, self.A)

    def _basis_jac(self, x):
        return _monomial_jacobian(x[None, :], self.A)[0]

    def _eval(self, theta, X):
        return self._basis(X) @ self._coef(theta).T

    def _jac_x(self, theta, x):
        return self._coef(theta) @ self._basis_jac(x)

    def _jac_theta(self, theta, X):
        m = X.shape[0]
        G = self._basis(X)  # (m, r)
        out = np.zeros((m, self.n_species, self.n_params))
        for l in range(self.n_species):
            out[:, l, l * self.n_monomials : (l + 1) * self.n_monomials] = G
        return out

    def species_param_mask(self):
        mask = np.zeros((self.n_species, self.n_params), dtype=bool)
        for l in range(self.n_species):
            mask[l, l * self.n_monomials : (l + 1) * self.n_monomials] = True
        return mask

    def edges_for_support(self, support):
        edges = set()
        for j in support:
            l, mono = divmod(int(j), self.n_monomials)
            for m in np.flatnonzero(self.A[mono] > 0):
                edges.add((int(m), l))
        return edges

    def _monomial_string(self, j):
        terms = []
        for i, a in enumerate(self.A[j]):
            if a == 1:
                terms.append(self.species_names[i])
            elif a > 1:
                terms.append(f"{self.species_names[i]}^{a}")
        return "*".join(terms) if terms else "1"

    def param_names(self):
        return tuple(
            f"d{self.species_names[l]}~{self._monomial_string(j)}"
            for l in range(self.n_species)
            for j in range(self.n_monomials)
        )


class RationalLawField(PowerLawField):
    """Rational law kinetics: dx/dt = theta (x^A / (1 + x^B)), elementwise fraction."""

    family = "rlk"
    linear_in_params = True

    def __init__(self, A, B, species_names=None):
        super().__init__(A, species_names=species_names)
        self.B = as_exponent_matrix(B, "B")
        if self.B.shape != self.A.shape:
            raise DimensionError("A and B must have identical shapes")

    def _basis(self, X):
        return _monomials(X, self.A) / (1.0 + _monomials(X, self.B))

    def _basis_jac(self, x):
        X = x[None, :]
        num = _monomials(X, self.A)[0]
        den = 1.0 + _monomials(X, self.B)[0]
        dnum = _monomial_jacobian(X, self.A)[0]
        dden = _monomial_jacobian(X, self.B)[0]
        return dnum / den[:, None] - (num / den**2)[:, None] * dden

    def edges_for_support(self, support):
        edges = set()
        for j in support:
            l, mono = divmod(int(j), self.n_monomials)
            depends = (self.A[mono] > 0) | (self.B[mono] > 0)
            for m in np.flatnonzero(depends):
                edges.add((int(m), l))
        return edges

    def param_names(self):
        def ratio(j):
            num = self._monomial_string(j)
            terms = []
            for i, b in enumerate(self.B[j]):
                if b == 1:
                    terms.append(self.species_names[i])
                elif b > 1:
                    terms.append(f"{self.species_names[i]}^{b}")
            den = "*".join(terms) if terms else ""
            return f"{num}/(1+{den})" if den else num

        return tuple(
            f"d{self.species_names[l]}~{ratio(j)}"
            for l in range(self.n_species)
            for j in range(self.n_monomials)
        )


class RationalMassActionField(FieldModel):
    """Rational mass action: dx/dt = C^T (theta1 x^A / (1 + theta2 x^A)).

    A is b x d, C is r x d; theta1 and theta2 are r x b and the parameter
    vector concatenates their row-major flattenings, theta2 constrained >= 0
    so denominators stay positive on the non-negative orthant.
    """

    family = "rmak"
    linear_in_params = False

    def __init__(self, A, C, species_names=None):
        self.A = as_exponent_matrix(A, "A")
        self.C = as_exponent_matrix(C, "C")
        if self.A.shape[1] != self.C.shape[1]:
            raise DimensionError("A and C must agree on the number of species")
        self.n_basis, self.n_species = self.A.shape
        self.n_ratios = self.C.shape[0]
        self.n_params = 2 * self.n_ratios * self.n_basis
        if species_names is None:
            species_names = tuple(f"X{i + 1}" for i in range(self.n_species))
        self.species_names = tuple(species_names)

    def split(self, theta):
        nb = self.n_ratios * self.n_basis
        return (
            theta[:nb].reshape(self.n_ratios, self.n_basis),
            theta[nb:].reshape(self.n_ratios, self.n_basis),
        )

    def _check_theta(self, theta):
        theta = super()._check_theta(theta)
        _, t2 = self.split(theta)
        if np.any(t2 < 0):
            raise DomainError("denominator parameters theta2 must be non-negative")
        return theta

    def _parts(self, theta, X):
        t1, t2 = self.split(theta)
        M = _monomials(X, self.A)  # (m, b)
        num = M @ t1.T  # (m, r)
        den = 1.0 + M @ t2.T
        return t1, t2, M, num, den

    def _eval(self, theta, X):
        _, _, _, num, den = self._parts(theta, X)
        return (num / den) @ self.C

    def _jac_x(self, theta, x):
        t1, t2, M, num, den = self._parts(theta, x[None, :])
        dM = _monomial_jacobian(x[None, :], self.A)[0]  # (b, d)
        dnum = t1 @ dM  # (r, d)
        dden = t2 @ dM
        drho = dnum / den[0][:, None] - (num[0] / den[0] ** 2)[:, None] * dden
        return self.C.T.astype(float) @ drho

    def _jac_theta(self, theta, X):
        _, _, M, num, den = self._parts(theta, X)
        m = X.shape[0]
        # d rho_s / d theta1[s, j] = M_j / den_s ; d rho_s / d theta2[s, j] = -num_s M_j / den_s^2
        g1 = M[:, None, :] / den[:, :, None]  # (m, r, b)
        g2 = -(num / den**2)[:, :, None] * M[:, None, :]
        Ct = self.C.T.astype(float)  # (d, r)
        out = np.empty((m, self.n_species, self.n_params))
        nb = self.n_ratios * self.n_basis
        out[:, :, :nb] = np.einsum("is,msb->misb", Ct, g1).reshape(m, self.n_species, nb)
        out[:, :, nb:] = np.einsum("is,msb->misb", Ct, g2).reshape(m, self.n_species, nb)
        return out

    def default_box(self):
        lo = np.full(self.n_params, -np.inf)
        lo[self.n_ratios * self.n_basis :] = 0.0
        return lo, np.full(self.n_params, np.inf)

    def species_param_mask(self):
        mask_half = np.zeros((self.n_species, self.n_ratios * self.n_basis), dtype=bool)
        for s in range(self.n_ratios):
            rows = np.flatnonzero(self.C[s] != 0)
            mask_half[np.ix_(rows, range(s * self.n_basis, (s + 1) * self.n_basis))] = True
        return np.concatenate([mask_half, mask_half], axis=1)

    def edges_for_support(self, support):
        nb = self.n_ratios * self.n_basis
        edges = set()
        for j in support:
            s, mono = divmod(int(j) % nb, self.n_basis)
            targets = np.flatnonzero(self.C[s] != 0)
            sources = np.flatnonzero(self.A[mono] > 0)
            edges.update((int(l), int(i)) for l in sources for i in targets)
        return edges

    def param_names(self):
        names = []
        for tag in ("num", "den"):
            for s in range(self.n_ratios):
                for j in range(self.n_basis):
                    names.append(f"{tag}[{s},{j}]")
        return tuple(names)


class _RestrictedField(FieldModel):
    """Generic view of a field over a subset of its parameter coordinates."""

    def __init__(self, base, support):
        self.base = base
        self.support = np.asarray(sorted(int(j) for j in support), dtype=int)
        if self.support.size and (
            self.support[0] < 0 or self.support[-1] >= base.n_params
        ):
            raise DimensionError("support indices out of range")
        self.family = base.family
        self.linear_in_params = base.linear_in_params
        self.n_species = base.n_species
        self.n_params = self.support.size
        self.species_names = base.species_names

    def expand(self, theta):
        full = np.zeros(self.base.n_params)
        full[self.support] = theta
        return full

    def _eval(self, theta, X):
        return self.base._eval(self.expand(theta), X)

    def _jac_x(self, theta, x):
        return self.base._jac_x(self.expand(theta), x)

    def _jac_theta(self, theta, X):
        return self.base._jac_theta(self.expand(theta), X)[:, :, self.support]

    def _check_theta(self, theta):
        theta = as_float_vector(theta, "theta")
        if theta.shape[0] != self.n_params:
            raise DimensionError(
                f"theta must have length {self.n_params}, got {theta.shape[0]}"
            )
        return theta

    def default_box(self):
        lo, hi = self.base.default_box()
        return lo[self.support], hi[self.support]

    def species_param_mask(self):
        return self.base.species_param_mask()[:, self.support]

    def edges_for_support(self, support):
        return self.base.edges_for_support(self.support[list(support)])

    def param_names(self):
        names = self.base.param_names()
        return tuple(names[j] for j in self.support)


def apply_environment(theta, scales, env=None):
    """Effective parameter in an environment: the Hadamard product theta * c_e.

    ``scales`` may be the scale vector itself or a sequence indexed by ``env``.
    """
    c = scales if env is None else scales[env]
    theta = as_float_vector(theta, "theta")
    c = as_float_vector(c, "c_e")
    if theta.shape != c.shape:
        raise DimensionError(
            f"scale vector length {c.shape[0]} does not match theta length {theta.shape[0]}"
        )
    return theta * c


# ---------------------------------------------------------------------------
# Search space enumeration
# ---------------------------------------------------------------------------


def lotka_volterra_space(d):
    """MAK reactions X_i+X_j->2X_i (i != j), X_i->2X_i, X_i->0; p = d(d+1)."""
    if d < 2:
        raise SpecificationError("need at least 2 species")
    rows_A, rows_B = [], []
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            a = np.zeros(d, dtype=int)
            b = np.zeros(d, dtype=int)
            a[i] = 1
            a[j] = 1
            b[i] = 2
            rows_A.append(a)
            rows_B.append(b)
    for i in range(d):
        a = np.zeros(d, dtype=int)
        b = np.zeros(d, dtype=int)
        a[i] = 1
        b[i] = 2
        rows_A.append(a)
        rows_B.append(b)
    for i in range(d):
        a = np.zeros(d, dtype=int)
        a[i] = 1
        rows_A.append(a)
        rows_B.append(np.zeros(d, dtype=int))
    return StoichiometrySpec(np.array(rows_A), np.array(rows_B))


def enzyme_space(d):
    """MAK reactions X_i+X_j->2X_i for i != j; p = d(d-1); conserves total mass."""
    if d < 2:
        raise SpecificationError("need at least 2 species")
    rows_A, rows_B = [], []
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            a = np.zeros(d, dtype=int)
            b = np.zeros(d, dtype=int)
            a[i] = 1
            a[j] = 1
            b[i] = 2
            rows_A.append(a)
            rows_B.append(b)
    return StoichiometrySpec(np.array(rows_A), np.array(rows_B))


def enzyme_catalytic_space(d):
    """MAK reactions X_i+X_j->X_i+X_k with j != i != k and j != k; p = d(d-1)(d-2)."""
    if d < 3:
        raise SpecificationError("need at least 3 species")
    rows_A, rows_B = [], []
    for i in range(d):
        for j in range(d):
            for k in range(d):
                if j == i or k == i or j == k:
                    continue
                a = np.zeros(d, dtype=int)
                b = np.zeros(d, dtype=int)
                a[i] = 1
                a[j] = 1
                b[i] = 1
                b[k] = 1
                rows_A.append(a)
                rows_B.append(b)
    return StoichiometrySpec(np.array(rows_A), np.array(rows_B))


def rational_first_order_space(d, species_names=None):
    """Rational-law field with numerator and denominator exponents running over
    all non-negative integer d-tuples summing to at most one; p = d(d+1)^2."""
    if d < 2:
        raise SpecificationError("need at least 2 species")
    tuples = [np.zeros(d, dtype=int)]
    for i in range(d):
        e = np.zeros(d, dtype=int)
        e[i] = 1
        tuples.append(e)
    A_rows, B_rows = [], []
    for a in tuples:
        for b in tuples:
            A_rows.append(a)
            B_rows.append(b)
    return RationalLawField(np.array(A_rows), np.array(B_rows), species_names=species_names)


def transfer_complex_space(d, species_names=None):
    """MAK reactions X->Y, X+Y->Z and Z->X+Y over d species.

    Pairs {X, Y} are unordered with X != Y; Z runs over all species.
    """
    if d < 2:
        raise SpecificationError("need at least 2 species")
    rows_A, rows_B = [], []
    for i in range(d):
        for j in range(d):
            if i == j:
                continue
            a = np.zeros(d, dtype=int)
            b = np.zeros(d, dtype=int)
            a[i] = 1
            b[j] = 1
            rows_A.append(a)
            rows_B.append(b)
    for i in range(d):
        for j in range(i + 1, d):
            for k in range(d):
                pair = np.zeros(d, dtype=int)
                pair[i] += 1
                pair[j] += 1
                z = np.zeros(d, dtype=int)
                z[k] = 1
                rows_A.append(pair.copy())
                rows_B.append(z.copy())
                rows_A.append(z.copy())
                rows_B.append(pair.copy())
    return StoichiometrySpec(np.array(rows_A), np.array(rows_B), species_names=species_names)


_SPACE_BUILDERS = {
    "lotka-volterra-space": lotka_volterra_space,
    "enzyme": enzyme_space,
    "enzyme-catalytic": enzyme_catalytic_space,
    "rational-first-order": rational_first_order_space,
    "transfer-complex": transfer_complex_space,
}


def search_space(kind, d, **kwargs):
    """Deterministic, duplicate-free search space enumeration by name."""
    try:
        builder = _SPACE_BUILDERS[kind]
    except KeyError:
        raise SpecificationError(
            f"unknown search space kind {kind!r}; choose from {sorted(_SPACE_BUILDERS)}"
        ) from None
    return builder(d, **kwargs)


# ---------------------------------------------------------------------------
# Serialization: plain text, integers round-trip exactly
# ---------------------------------------------------------------------------

_FIELD_SCHEMA = "sparseode-field v1"


def _write_int_matrix(out, tag, M):
    out.write(f"{tag} {M.shape[0]} {M.shape[1]}\n")
    for row in M:
        out.write(" ".join(str(int(v)) for v in row) + "\n")


def dump_field(field, theta=None):
    """Serialize a field (and optionally a parameter vector) to text."""
    out = io.StringIO()
    out.write(_FIELD_SCHEMA + "\n")
    out.write(f"family {field.family}\n")
    out.write("species " + " ".join(field.species_names) + "\n")
    if field.family == "mak":
        _write_int_matrix(out, "A", field.stoichiometry.A)
        _write_int_matrix(out, "B", field.stoichiometry.B)
    elif field.family == "plk":
        _write_int_matrix(out, "A", field.A)
    elif field.family == "rlk":
        _write_int_matrix(out, "A", field.A)
        _write_int_matrix(out, "B", field.B)
    elif field.family == "rmak":
        _write_int_matrix(out, "A", field.A)
        _write_int_matrix(out, "C", field.C)
    else:
        raise SpecificationError(f"cannot serialize family {field.family!r}")
    if theta is not None:
        theta = as_float_vector(theta, "theta", length=field.n_params)
        out.write("theta " + " ".join(repr(float(v)) for v in theta) + "\n")
    return out.getvalue()


def _read_int_matrix(lines, idx, tag):
    head = lines[idx].split()
    if head[0] != tag:
        raise SchemaError(f"expected matrix {tag!r}, found {lines[idx]!r}")
    rows, cols = int(head[1]), int(head[2])
    M = np.array(
        [[int(v) for v in lines[idx + 1 + r].split()] for r in range(rows)], dtype=np.int64
    )
    if M.shape != (rows, cols):
        raise SchemaError(f"matrix {tag!r} has inconsistent dimensions")
    return M, idx + 1 + rows


def load_field(text):
    """Inverse of :func:`dump_field`; returns (field, theta-or-None)."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _FIELD_SCHEMA:
        raise SchemaError(f"unknown field schema: {lines[:1]}")
    if not lines[1].startswith("family "):
        raise SchemaError("missing family line")
    family = lines[1].split()[1]
    species = tuple(lines[2].split()[1:])
    idx = 3
    if family == "mak":
        A, idx = _read_int_matrix(lines, idx, "A")
        B, idx = _read_int_matrix(lines, idx, "B")
        field = MassActionField(StoichiometrySpec(A, B, species_names=species))
    elif family == "plk":
        A, idx = _read_int_matrix(lines, idx, "A")
        field = PowerLawField(A, species_names=species)
    elif family == "rlk":
        A, idx = _read_int_matrix(lines, idx, "A")
        B, idx = _read_int_matrix(lines, idx, "B")
        field = RationalLawField(A, B, species_names=species)
    elif family == "rmak":
        A, idx = _read_int_matrix(lines, idx, "A")
        C, idx = _read_int_matrix(lines, idx, "C")
        field = RationalMassActionField(A, C, species_names=species)
    else:
        raise SchemaError(f"unknown family {family!r}")
    theta = None
    if idx < len(lines) and lines[idx].startswith("theta "):
        theta = np.array([float(v) for v in lines[idx].split()[1:]])
    return field, theta
