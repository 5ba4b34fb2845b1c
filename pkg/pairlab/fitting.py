"""
Weighted nonlinear least-squares engine and the model catalog used by the analysis module.

Every catalog model returns its value and its analytic Jacobian. Fits minimize
sum(((y - f(x; theta)) / sigma_y)**2) with a damped Gauss-Newton (Levenberg-Marquardt) iteration.
"""

import logging
import numpy as np
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

LAMBDA_START = 1e-3
LAMBDA_UP = 10.
LAMBDA_DOWN = 0.3
LAMBDA_MAX = 1e16
XTOL = 1e-10
GTOL = 1e-12
SQRT_2PI = np.sqrt(2 * np.pi)


@dataclass(frozen=True)
class FitModel:
    name: str
    param_names: tuple
    func: object
    # parameters that must stay positive (fitted in log space when bounded)
    positive: tuple = ()
    # parameters confined to [0, 1] (fitted through sin**2 when bounded)
    unit_interval: tuple = ()


@dataclass
class FitResult:
    """
    Outcome of a weighted least-squares fit. Uncertainties are one standard deviation.
    """

    model: str
    param_names: tuple
    values: np.ndarray
    covariance: np.ndarray
    residual_norm: float
    chi2: float
    dof: int
    converged: bool
    iterations: int
    message: str = ''
    extra: dict = field(default_factory=dict)

    @property
    def params(self):
        return dict(zip(self.param_names, (float(v) for v in self.values)))

    @property
    def std_errs(self):
        diag = np.clip(np.diag(self.covariance), 0, None)
        return dict(zip(self.param_names, (float(v) for v in np.sqrt(diag))))

    @property
    def reduced_chi2(self):
        return self.chi2 / self.dof if self.dof > 0 else np.nan

    def param(self, name):
        return self.params[name]

    def err(self, name):
        return self.std_errs[name]

    def to_dict(self):
        return {
            'model': self.model,
            'params': self.params,
            'std_errs': self.std_errs,
            'residual_norm': float(self.residual_norm),
            'reduced_chi2': float(self.reduced_chi2),
            'converged': bool(self.converged),
            'iterations': int(self.iterations),
        }


def _gaussian(x, p):
    amplitude, center, sigma, floor = p
    u = (x - center) / sigma
    e = np.exp(-0.5 * u ** 2)
    f = amplitude * e + floor
    jac = np.column_stack([e,
                           amplitude * e * u / sigma,
                           amplitude * e * u ** 2 / sigma,
                           np.ones_like(x)])
    return f, jac


def _triple_gaussian(x, p):
    amp_left, amp_center, amp_right, center, delay, sigma, floor = p
    f = np.full_like(x, floor, dtype=float)
    jac = np.zeros((len(x), 7))
    jac[:, 6] = 1.
    for i, (amp, shift) in enumerate(((amp_left, -1.), (amp_center, 0.), (amp_right, 1.))):
        u = (x - center - shift * delay) / sigma
        e = np.exp(-0.5 * u ** 2)
        f += amp * e
        jac[:, i] = e
        jac[:, 3] += amp * e * u / sigma
        jac[:, 4] += shift * amp * e * u / sigma
        jac[:, 5] += amp * e * u ** 2 / sigma
    return f, jac


def _sinusoid(x, p):
    amplitude, visibility, period, phase = p
    arg = 2 * np.pi * x / period + phase
    c, s = np.cos(arg), np.sin(arg)
    f = amplitude * (1 + visibility * c)
    jac = np.column_stack([1 + visibility * c,
                           amplitude * c,
                           amplitude * visibility * s * 2 * np.pi * x / period ** 2,
                           -amplitude * visibility * s])
    return f, jac


def _harmonic(x, p):
    c0, c1, c2 = p
    c, s = np.cos(x), np.sin(x)
    return c0 + c1 * c + c2 * s, np.column_stack([np.ones_like(x), c, s])


def _quadratic(x, p):
    rate, = p
    return rate * x ** 2, (x ** 2)[:, None]


def _sigmoid(x, p):
    a, = p
    q = a * x ** 2
    return q / (1 + q), (x ** 2 / (1 + q) ** 2)[:, None]


def _power_law(x, p):
    scale, exponent, offset = p
    xk = x ** exponent
    return scale * xk + offset, np.column_stack([xk, scale * xk * np.log(x), np.ones_like(x)])


MODELS = {
    'gaussian': FitModel('gaussian', ('amplitude', 'center', 'sigma', 'floor'), _gaussian,
                         positive=('sigma',)),
    'triple_gaussian': FitModel('triple_gaussian',
                                ('amp_left', 'amp_center', 'amp_right', 'center', 'delay', 'sigma', 'floor'),
                                _triple_gaussian, positive=('sigma', 'delay')),
    'sinusoid': FitModel('sinusoid', ('amplitude', 'visibility', 'period', 'phase'), _sinusoid,
                         positive=('period',), unit_interval=('visibility',)),
    'harmonic': FitModel('harmonic', ('c0', 'c1', 'c2'), _harmonic),
    'quadratic': FitModel('quadratic', ('R',), _quadratic),
    'sigmoid': FitModel('sigmoid', ('a',), _sigmoid, positive=('a',)),
    'power_law': FitModel('power_law', ('scale', 'exponent', 'offset'), _power_law),
}


def get_model(model):
    """
    Look up a catalog model by name.

    Args:
    model (str or FitModel): model id

    Returns:
    model (FitModel): catalog entry
    """

    if isinstance(model, FitModel):
        return model
    try:
        return MODELS[model]
    except KeyError:
        raise ValueError(f'Unknown model "{model}". Available models: {", ".join(sorted(MODELS))}')


def _as_param_array(fit_model, params):
    if isinstance(params, dict):
        missing = [n for n in fit_model.param_names if n not in params]
        if missing:
            raise ValueError(f'Missing parameters for {fit_model.name}: {missing}')
        return np.array([params[n] for n in fit_model.param_names], dtype=float)
    params = np.asarray(params, dtype=float)
    if params.shape != (len(fit_model.param_names),):
        raise ValueError(f'{fit_model.name} takes {len(fit_model.param_names)} parameters, got {params.shape}')
    return params


def model_eval(model, params, x):
    """
    Evaluate a catalog model and its analytic Jacobian.

    Args:
    model (str): model id
    params (dict or array-like): parameter values, by name or in catalog order
    x (array-like): abscissa

    Returns:
    f (numpy.ndarray): model values, shape (n,)
    jac (numpy.ndarray): derivatives with respect to each parameter, shape (n, n_params)
    """

    fit_model = get_model(model)
    x = np.asarray(x, dtype=float)
    return fit_model.func(x, _as_param_array(fit_model, params))


class _Transform:
    """Maps internal unconstrained coordinates onto the model's bounded parameters."""

    def __init__(self, fit_model, bounded):
        names = fit_model.param_names
        self.log_idx = [names.index(n) for n in fit_model.positive] if bounded else []
        self.sin_idx = [names.index(n) for n in fit_model.unit_interval] if bounded else []

    def to_internal(self, theta):
        u = theta.copy()
        for i in self.log_idx:
            u[i] = np.log(max(theta[i], 1e-300))
        for i in self.sin_idx:
            u[i] = np.arcsin(np.sqrt(np.clip(theta[i], 0, 1)))
        return u

    def to_params(self, u):
        theta = u.copy()
        dtheta = np.ones_like(u)
        for i in self.log_idx:
            theta[i] = np.exp(u[i])
            dtheta[i] = theta[i]
        for i in self.sin_idx:
            theta[i] = np.sin(u[i]) ** 2
            dtheta[i] = np.sin(2 * u[i])
        return theta, dtheta


def _covariance(jac_w, scale=1.):
    normal = jac_w.T @ jac_w
    try:
        cov = np.linalg.inv(normal)
        ok = np.all(np.isfinite(cov))
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        return np.linalg.pinv(normal) * scale, False
    # symmetrize against round-off
    return 0.5 * (cov + cov.T) * scale, True


def nlls_fit(model, x, y, sigma_y, init, max_iter=200, bounded=False, scale_covariance=False):
    """
    Weighted nonlinear least-squares fit of a catalog model.

    Damping starts at 1e-3, grows x10 after a rejected step and shrinks x0.3 after an accepted one;
    the undamped Gauss-Newton step is tried alongside the damped one and the lower chi2 wins.
    Iteration stops once the relative parameter change falls below 1e-10 or the gradient norm below 1e-12.

    Args:
    model (str): model id from MODELS
    x (array-like): abscissa
    y (array-like): observations
    sigma_y (array-like or float): one-sigma uncertainty of each observation (> 0)
    init (dict or array-like): starting parameters
    max_iter (int): iteration cap
    bounded (bool): keep positive parameters positive and visibilities in [0, 1]
    scale_covariance (bool): multiply the covariance by the reduced chi2 (goodness-of-fit errors)

    Returns:
    result (FitResult): fitted parameters, covariance and convergence diagnostics
    """

    fit_model = get_model(model)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma_y = np.broadcast_to(np.asarray(sigma_y, dtype=float), y.shape)
    theta = _as_param_array(fit_model, init)
    n_params = len(theta)

    if x.shape != y.shape:
        raise ValueError(f'x and y must have the same shape, got {x.shape} and {y.shape}')
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(sigma_y))
            and np.all(np.isfinite(theta))):
        raise ValueError('NaN or infinite values in fit inputs')
    if np.any(sigma_y <= 0):
        raise ValueError('All sigma_y must be positive')
    if len(y) < n_params:
        raise ValueError(f'{fit_model.name} needs at least {n_params} points, got {len(y)}')

    transform = _Transform(fit_model, bounded)
    u = transform.to_internal(theta)

    def evaluate(u_):
        theta_, dtheta = transform.to_params(u_)
        f, jac = fit_model.func(x, theta_)
        resid = (y - f) / sigma_y
        return theta_, resid, jac * dtheta / sigma_y[:, None]

    theta, resid, jac_w = evaluate(u)
    chi2 = resid @ resid
    lam = LAMBDA_START
    converged = False
    message = 'maximum iterations reached'
    iterations = 0

    for _ in range(max_iter):
        grad = jac_w.T @ resid
        if np.linalg.norm(grad) < GTOL:
            converged, message = True, 'gradient below tolerance'
            break

        normal = jac_w.T @ jac_w
        diag = np.diag(normal).copy()
        diag[diag <= 0] = 1.

        best = None
        for damping in ((0., lam) if lam <= LAMBDA_START else (lam,)):
            try:
                step = np.linalg.solve(normal + damping * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                continue
            if not np.all(np.isfinite(step)):
                continue
            cand = evaluate(u + step)
            cand_chi2 = cand[1] @ cand[1]
            if np.isfinite(cand_chi2) and (best is None or cand_chi2 < best[0]):
                best = (cand_chi2, step, cand)

        if best is None:
            if lam >= LAMBDA_MAX:
                message = 'singular normal matrix'
                break
            lam *= LAMBDA_UP
            continue

        new_chi2, step, cand = best
        if new_chi2 <= chi2:
            u = u + step
            theta, resid, jac_w = cand
            iterations += 1
            small_step = np.linalg.norm(step) <= XTOL * (np.linalg.norm(u) + XTOL)
            small_gain = chi2 - new_chi2 <= 1e-15 * max(chi2, 1.)
            chi2 = new_chi2
            lam = max(lam * LAMBDA_DOWN, 1e-12)
            if small_step or (small_gain and chi2 < 1e-20):
                converged, message = True, 'parameter change below tolerance'
                break
        else:
            lam *= LAMBDA_UP
            if lam > LAMBDA_MAX:
                # no downhill step exists at machine precision
                converged, message = True, 'no further improvement'
                break

    # covariance in the model's own parameterization
    _, jac = fit_model.func(x, theta)
    jac_plain = jac / sigma_y[:, None]
    dof = len(y) - n_params
    scale = chi2 / dof if (scale_covariance and dof > 0) else 1.
    covariance, invertible = _covariance(jac_plain, scale)
    if not invertible:
        converged = False
        message = 'singular normal matrix'

    log.debug('%s fit: chi2=%g iterations=%d converged=%s (%s)',
              fit_model.name, chi2, iterations, converged, message)

    return FitResult(model=fit_model.name,
                     param_names=fit_model.param_names,
                     values=theta,
                     covariance=covariance,
                     residual_norm=float(np.sqrt(chi2)),
                     chi2=float(chi2),
                     dof=dof,
                     converged=converged,
                     iterations=iterations,
                     message=message)


def poisson_sigma(counts):
    """
    One-sigma uncertainty of Poisson bin counts; empty bins get 1.

    Args:
    counts (array-like): bin counts

    Returns:
    sigma (numpy.ndarray): sqrt(counts) with zeros replaced by 1
    """

    counts = np.asarray(counts, dtype=float)
    return np.sqrt(np.where(counts > 0, counts, 1.))


def poisson_fit(model, x, counts, init, reweight_passes=5, **kwargs):
    """
    Fit binned counts, then re-weight with the model prediction until the weights settle.

    The first pass uses the observed counts as variances. Each later pass uses the previous fit's
    prediction, whose fixed point satisfies the Poisson likelihood equations, so low-count floors
    are not pulled toward zero.

    Args:
    model (str): model id
    x (array-like): bin centers
    counts (array-like): bin counts
    init (dict or array-like): starting parameters
    reweight_passes (int): number of re-weighting passes after the first fit
    kwargs: forwarded to nlls_fit

    Returns:
    result (FitResult): final fit
    """

    counts = np.asarray(counts, dtype=float)
    result = nlls_fit(model, x, counts, poisson_sigma(counts), init, **kwargs)
    for _ in range(reweight_passes):
        if not result.converged:
            break
        prediction, _ = model_eval(model, result.values, x)
        sigma = np.sqrt(np.clip(prediction, 1e-3, None))
        previous = result.values
        result = nlls_fit(model, x, counts, sigma, previous, **kwargs)
        if np.allclose(result.values, previous, rtol=1e-8, atol=0):
            break
    return result


def derived_uncertainty(result, gradient):
    """
    Propagate the fit covariance onto a derived quantity.

    Args:
    result (FitResult): fit with covariance
    gradient (array-like): derivative of the derived quantity with respect to each parameter

    Returns:
    sigma (float): one-sigma uncertainty
    """

    gradient = np.asarray(gradient, dtype=float)
    return float(np.sqrt(max(gradient @ result.covariance @ gradient, 0.)))
