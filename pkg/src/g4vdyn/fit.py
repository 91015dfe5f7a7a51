"""
Damped Gauss-Newton (Levenberg-Marquardt) least squares and the model fitters
used by the experiments.

All fitters minimise ``sum(((y - model(x, p)) / sigma)**2)``.  Parameter
errors are the square roots of the diagonal of the inverse weighted
Gauss-Newton Hessian ``(J^T W J)^-1`` at the optimum.  When no ``sigma`` is
given, unit weights are used and the covariance is rescaled by the reduced
chi-square.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, RankDeficiencyError

__all__ = [
    "FitResult", "least_squares", "numeric_jacobian",
    "fit_exponential_decay", "fit_linear_through_origin",
    "fit_saturating_exponential", "fit_lorentzian", "fit_cpt", "poisson_refit",
    "exponential_model", "saturating_model", "lorentzian_model",
]


@dataclass
class FitResult:
    params: np.ndarray
    param_errors: np.ndarray
    residual_norm: float
    n_iterations: int
    converged: bool
    covariance: np.ndarray
    names: tuple = ()
    gradient_norm: float = 0.0
    message: str = ""
    chi2_history: list = field(default_factory=list)
    options: dict = field(default_factory=dict)

    @property
    def chi2(self):
        return self.residual_norm ** 2

    def __getitem__(self, name):
        """Return ``(value, error)`` of a named parameter."""
        i = self.names.index(name)
        return float(self.params[i]), float(self.param_errors[i])

    def to_dict(self):
        return {
            "names": list(self.names),
            "params": [float(v) for v in self.params],
            "param_errors": [float(v) for v in self.param_errors],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "residual_norm": float(self.residual_norm),
            "n_iterations": int(self.n_iterations),
            "converged": bool(self.converged),
            "gradient_norm": float(self.gradient_norm),
            "message": self.message,
            "options": self.options,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def numeric_jacobian(func, p, f0=None):
    """Forward-difference Jacobian of ``func`` at ``p``.

    Step per parameter is ``max(1e-8, 1e-6 * |p_i|)``.
    """
    p = np.asarray(p, dtype=float)
    if f0 is None:
        f0 = np.asarray(func(p), dtype=float)
    jac = np.empty((f0.size, p.size))
    for i in range(p.size):
        h = max(1e-8, 1e-6 * abs(p[i]))
        q = p.copy()
        q[i] += h
        jac[:, i] = (np.asarray(func(q), dtype=float) - f0) / h
    return jac


def _check_rank(jw):
    if jw.size == 0 or not np.all(np.isfinite(jw)):
        raise RankDeficiencyError("Jacobian is empty or not finite")
    sv = np.linalg.svd(jw, compute_uv=False)
    if sv[0] == 0 or sv[-1] <= sv[0] * 1e-13:
        raise RankDeficiencyError(
            f"Gauss-Newton Hessian is singular (singular values {sv[0]:.3g} .. {sv[-1]:.3g})")


def least_squares(model, x, y, sigma=None, p0=None, *, jac=None, names=(),
                  max_iter=500, xtol=1e-10, gtol=1e-12, lam0=1e-3):
    """Minimise the weighted sum of squared residuals of ``model(x, p)``.

    Parameters
    ----------
    model : callable
        ``model(x, p) -> ndarray`` of the same shape as ``y``.
    x, y : array_like
        Data.  Needs at least ``len(p0)`` points.
    sigma : array_like, optional
        Standard errors of ``y`` (all > 0).  Unit weights if omitted.
    p0 : array_like
        Starting parameters.
    jac : callable, optional
        Analytic ``jac(x, p) -> (n, k)`` derivative of the model; replaces
        the forward-difference Jacobian.
    max_iter, xtol, gtol : stopping rules.  The iteration stops when an
        accepted step changes ``p`` by less than ``xtol`` relative, when the
        scaled gradient falls below ``gtol``, or after ``max_iter``
        iterations (then ``converged`` is False).

    Raises
    ------
    RankDeficiencyError
        If the weighted Jacobian is rank deficient at the start or the end.
    """
    x = np.asarray(x)
    y = np.asarray(y, dtype=float).ravel()
    p = np.array(p0, dtype=float).ravel()
    if y.size < p.size:
        raise FitError(f"{y.size} data points cannot determine {p.size} parameters")
    absolute = sigma is not None
    if absolute:
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape).ravel()
        if np.any(~(sigma > 0)):
            raise FitError("all sigma must be strictly positive")
        w = 1.0 / sigma
    else:
        w = np.ones_like(y)

    def fun(q):
        return np.asarray(model(x, q), dtype=float).ravel()

    def weighted_jac(q, fq):
        if jac is not None:
            return np.asarray(jac(x, q), dtype=float).reshape(y.size, q.size) * w[:, None]
        return numeric_jacobian(fun, q, fq) * w[:, None]

    f = fun(p)
    r = (y - f) * w
    chi2 = float(r @ r)
    if not np.isfinite(chi2):
        raise FitError("model is not finite at the starting point")
    history = [chi2]
    lam = lam0
    converged = False
    message = "maximum number of iterations reached"
    jw = weighted_jac(p, f)
    _check_rank(jw)
    gnorm = np.inf
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        g = jw.T @ r
        rnorm = np.sqrt(chi2)
        colnorm = np.linalg.norm(jw, axis=0)
        if rnorm == 0:
            gnorm = 0.0
        else:
            gnorm = float(np.max(np.abs(g) / np.where(colnorm > 0, colnorm, 1.0)) / rnorm)
        if gnorm <= gtol:
            converged, message = True, "gradient below tolerance"
            break
        hess = jw.T @ jw
        diag = np.diag(hess).copy()
        diag[diag <= 0] = 1.0
        accepted = False
        while True:
            try:
                step = np.linalg.solve(hess + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                p_new = p + step
                f_new = fun(p_new)
                r_new = (y - f_new) * w
                chi2_new = float(r_new @ r_new)
                small = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
                if np.isfinite(chi2_new) and chi2_new <= chi2:
                    accepted = True
                    break
                if small:
                    break
            lam *= 10.0
            if lam > 1e20:
                small = True
                break
        if accepted:
            p, f, r, chi2 = p_new, f_new, r_new, chi2_new
            history.append(chi2)
            lam = max(lam / 10.0, 1e-15)
            jw = weighted_jac(p, f)
            if small:
                converged, message = True, "relative step below tolerance"
                break
        else:
            converged, message = True, "no further decrease possible"
            break

    _check_rank(jw)
    hess = jw.T @ jw
    try:
        cov = np.linalg.inv(hess)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("Gauss-Newton Hessian is singular at the optimum") from None
    dof = y.size - p.size
    if not absolute:
        cov = cov * (chi2 / dof if dof > 0 else 0.0)
    errors = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return FitResult(
        params=p, param_errors=errors, residual_norm=float(np.sqrt(chi2)),
        n_iterations=n_iter, converged=converged, covariance=cov,
        names=tuple(names), gradient_norm=float(gnorm), message=message,
        chi2_history=history,
        options={"max_iter": max_iter, "xtol": xtol, "gtol": gtol, "lam0": lam0,
                 "weighted": absolute, "analytic_jacobian": jac is not None,
                 "p0": [float(v) for v in np.ravel(p0)]},
    )


# ---------------------------------------------------------------------------
# Model-specific fitters

def exponential_model(t, p):
    return p[0] * np.exp(-p[1] * t)


def exponential_jac(t, p):
    e = np.exp(-p[1] * t)
    return np.column_stack([e, -p[0] * t * e])


def fit_exponential_decay(bin_edges, counts, weighting="model", **options):
    """Fit ``A * exp(-rate * t)`` to a histogram of durations.

    Bins are evaluated at their centres.  The start value comes from a
    log-linear regression on the non-empty bins, and the first pass weights
    bins by ``sqrt(max(count, 1))``.  With ``weighting="model"`` (default)
    the fit is repeated with Poisson errors ``sqrt(model)`` until the
    parameters settle; ``weighting="counts"`` stops after the first pass.

    Returns a :class:`FitResult` with parameters ``("amplitude", "rate")``;
    ``converged`` is False when the fitted rate is not resolved above zero.
    """
    edges = np.asarray(bin_edges, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if edges.size != counts.size + 1:
        raise FitError("need len(bin_edges) == len(counts) + 1")
    if weighting not in ("model", "counts"):
        raise FitError(f"unknown weighting {weighting!r}")
    t = 0.5 * (edges[1:] + edges[:-1])
    nz = counts > 0
    if np.count_nonzero(nz) < 2:
        raise RankDeficiencyError("need at least two non-empty bins")
    slope, intercept = np.polyfit(t[nz], np.log(counts[nz]), 1)
    p0 = [np.exp(intercept), max(-slope, 0.0)]
    sigma = np.sqrt(np.maximum(counts, 1.0))
    res = least_squares(exponential_model, t, counts, sigma, p0, jac=exponential_jac,
                        names=("amplitude", "rate"), **options)
    if weighting == "model":
        # Neyman weights bias the rate upwards when tail bins hold few counts
        res = poisson_refit(exponential_model, t, counts, res, names=("amplitude", "rate"),
                            jac=exponential_jac, **options)
    rate, err = res["rate"]
    if not rate > err:
        res.converged = False
        res.message = "decay rate not resolved above zero"
    return res


def fit_linear_through_origin(x, y, sigma=None, **options):
    """Fit ``y = slope * x``.  Returns a :class:`FitResult` named ``("slope",)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    denom = np.sum(w * x * x)
    if denom == 0:
        raise RankDeficiencyError("all abscissae are zero")
    p0 = [np.sum(w * x * y) / denom]
    return least_squares(lambda xx, p: p[0] * xx, x, y, sigma, p0,
                         jac=lambda xx, p: xx[:, None], names=("slope",), **options)


def saturating_model(t, p):
    return p[0] * (1.0 - np.exp(-t / p[1]))


def fit_saturating_exponential(t, y, sigma=None, **options):
    """Fit ``eta_max * (1 - exp(-t / tau))``; parameters ``("eta_max", "tau")``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(t)
    top = y[order][-max(1, len(t) // 4):]
    eta0 = max(float(np.mean(top)), 1e-3)
    target = (1.0 - np.exp(-1.0)) * eta0
    above = t[order][y[order] >= target]
    tau0 = float(above[0]) if above.size and above[0] > 0 else float(np.max(t)) / 3.0
    if tau0 <= 0:
        raise RankDeficiencyError("need positive pulse lengths")
    return least_squares(saturating_model, t, y, sigma, [eta0, tau0],
                         names=("eta_max", "tau"), **options)


def lorentzian_model(f, p):
    """``amplitude * L(f; center, fwhm) + offset`` with unit-peak ``L``."""
    amp, f0, fwhm, offset = p
    hw2 = (0.5 * fwhm) ** 2
    return amp * hw2 / ((f - f0) ** 2 + hw2) + offset


def poisson_refit(model, x, counts, result, names=(), max_rounds=20, **options):
    """Refit count data with Poisson errors evaluated at the fitted model.

    Starts from ``result`` and iterates until the parameters settle.
    Weighting by the observed counts biases fits towards low-count bins.
    """
    counts = np.asarray(counts, dtype=float)
    floor = max(1e-3, 1e-6 * float(np.max(counts)))
    for _ in range(max_rounds):
        sigma = np.sqrt(np.maximum(model(x, result.params), floor))
        new = least_squares(model, x, counts, sigma, result.params, names=names, **options)
        done = np.allclose(new.params, result.params, rtol=1e-9, atol=0)
        result = new
        if done:
            break
    result.options["weighting"] = "model"
    return result


def fit_lorentzian(f, y, sigma=None, *, poisson=False, **options):
    """Fit a Lorentzian peak on a flat offset.

    Parameters are ``("amplitude", "center", "fwhm", "offset")``.  With
    ``poisson=True``, ``y`` are raw counts and the fit is reweighted with
    ``sqrt(model)`` errors.  The fitted FWHM is returned as its absolute
    value.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    n_edge = max(1, len(f) // 10)
    offset0 = float(np.median(np.concatenate([y[:n_edge], y[-n_edge:]])))
    i_max = int(np.argmax(y))
    amp0 = float(y[i_max] - offset0)
    if not amp0 > 0:
        raise FitError("no peak above the offset")
    half = offset0 + 0.5 * amp0
    above = f[y >= half]
    fwhm0 = float(above[-1] - above[0]) if above.size > 1 else float(np.ptp(f)) / 10
    fwhm0 = max(fwhm0, float(np.min(np.diff(f))) if len(f) > 1 else 1.0)
    names = ("amplitude", "center", "fwhm", "offset")
    if poisson and sigma is None:
        sigma = np.sqrt(np.maximum(y, 1.0))
    res = least_squares(lorentzian_model, f, y, sigma, [amp0, f[i_max], fwhm0, offset0],
                        names=names, **options)
    if poisson:
        res = poisson_refit(lorentzian_model, f, y, res, names=names, **options)
    res.params[2] = abs(res.params[2])
    return res


def fit_cpt(delta, counts, sigma, known, free, *, emitter=None, background=0.0,
            count_scale=None, p0=None, taper=0.0, **options):
    """Fit a CPT spectrum with the Lambda-system steady-state model.

    Parameters
    ----------
    delta : array_like
        Two-photon detunings, Hz.
    counts, sigma : array_like
        Count rates and their errors, counts/s.
    known : LambdaSystem
        Template holding every parameter that is not fitted.
    free : sequence of str
        Names to fit: any numeric field of ``LambdaSystem`` (``gamma_s``,
        ``omega1``, ``omega2``, ``delta1``, ``gamma_flip``, ``eta_branch``,
        ``gamma``) and ``"background"`` or ``"count_scale"``.
    emitter : EmitterParams, optional
        Supplies ``c_max`` when ``count_scale`` is not given.
    p0 : mapping, optional
        Start values overriding those taken from ``known``.

    The fit can be run in stages: fit Rabi frequencies and count scale on a
    high-power spectrum, freeze them into ``known``, then fit ``gamma_s`` on
    a low-power spectrum.
    """
    from dataclasses import replace

    from . import lindblad

    free = tuple(free)
    if not free:
        raise FitError("free parameter mask is empty")
    if count_scale is None:
        count_scale = emitter.c_max if emitter is not None else 45e3
    fixed = {"background": float(background), "count_scale": float(count_scale)}
    system_fields = set(lindblad.LambdaSystem.numeric_fields())
    for name in free:
        if name not in system_fields and name not in fixed:
            raise FitError(f"unknown free parameter {name!r}")
    start = []
    for name in free:
        if p0 is not None and name in p0:
            start.append(float(p0[name]))
        elif name in fixed:
            start.append(fixed[name])
        else:
            start.append(float(getattr(known, name)))

    def model(d, p):
        values = dict(zip(free, p))
        sys_kw = {k: v for k, v in values.items() if k in system_fields}
        # negative rates are unphysical; the model is even in them
        for k in ("gamma_s", "gamma_flip", "omega1", "omega2", "gamma"):
            if k in sys_kw:
                sys_kw[k] = abs(sys_kw[k])
        if "eta_branch" in sys_kw:
            sys_kw["eta_branch"] = max(sys_kw["eta_branch"], 1.0)
        system = replace(known, **sys_kw)
        rho_ee = lindblad.excited_population(system, d, taper=taper)
        scale = values.get("count_scale", fixed["count_scale"])
        bg = values.get("background", fixed["background"])
        return 2.0 * scale * rho_ee + bg

    res = least_squares(model, np.asarray(delta, dtype=float), counts, sigma, start,
                        names=free, **options)
    for i, name in enumerate(free):
        if name in ("gamma_s", "gamma_flip", "omega1", "omega2", "gamma"):
            res.params[i] = abs(res.params[i])
    return res
