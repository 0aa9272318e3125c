use super::{ensure_finite, ensure_square, max_sym_eigenvalue, min_sym_eigenvalue, Mat, NumericsError, Result};

/// Robust guaranteed-cost state-feedback LMI for a discrete polytopic system
/// `x⁺ = (A + M F N_a) x + (B + M F N_b) u`, `‖F‖ ≤ 1`.
///
/// Unknowns are `P = Pᵀ` (n×n), `Y` (m×n) and a scalar multiplier `ε`;
/// the feedback gain is `K = Y P⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub a: Mat,
    pub b: Mat,
    /// Uncertainty structure, n × (k·n).
    pub m: Mat,
    /// Stacked state error matrices, (k·n) × n.
    pub n_a: Mat,
    /// Stacked input error matrices, (k·n) × m.
    pub n_b: Mat,
    pub q: Mat,
    pub r: Mat,
    /// Required negative-definiteness margin, `λ_max(block) ≤ −tol`.
    pub tol: f64,
    /// When set, the guaranteed cost `x₀ᵀP⁻¹x₀` is minimized over the feasible set.
    pub cost_state: Option<Vec<f64>>,
    pub max_newton_steps: usize,
}

impl SdpProblem {
    /// Builds the problem from error-matrix vertices `(A_el, B_el)`.
    /// An empty vertex list yields a single zero vertex (no uncertainty).
    pub fn robust(a: &Mat, b: &Mat, vertices: &[(Mat, Mat)], q: &Mat, r: &Mat) -> Self {
        let n = a.nrows();
        let mi = b.ncols();
        let zero = [(Mat::zeros(n, n), Mat::zeros(n, mi))];
        let verts: &[(Mat, Mat)] = if vertices.is_empty() { &zero } else { vertices };
        let k = verts.len();
        let mut m = Mat::zeros(n, k * n);
        let mut n_a = Mat::zeros(k * n, n);
        let mut n_b = Mat::zeros(k * n, mi);
        for (p, (ae, be)) in verts.iter().enumerate() {
            m.view_mut((0, p * n), (n, n)).fill_with_identity();
            n_a.view_mut((p * n, 0), (n, n)).copy_from(ae);
            n_b.view_mut((p * n, 0), (n, mi)).copy_from(be);
        }
        Self {
            a: a.clone(),
            b: b.clone(),
            m,
            n_a,
            n_b,
            q: q.clone(),
            r: r.clone(),
            tol: 1e-7,
            cost_state: None,
            max_newton_steps: 2000,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn validate(&self) -> Result<()> {
        let n = ensure_square(&self.a, "A")?;
        let mi = ensure_square(&self.r, "R")?;
        let kn = self.m.ncols();
        let ok = self.b.shape() == (n, mi)
            && self.q.shape() == (n, n)
            && self.m.nrows() == n
            && kn > 0
            && self.n_a.shape() == (kn, n)
            && self.n_b.shape() == (kn, mi);
        if !ok {
            return Err(NumericsError::Dimension("inconsistent LMI block layout".into()));
        }
        if let Some(x0) = &self.cost_state {
            if x0.len() != n {
                return Err(NumericsError::Dimension("cost state length must equal state dimension".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(NumericsError::InvalidArgument("strictness tolerance must be positive".into()));
        }
        for (m, name) in [(&self.a, "A"), (&self.b, "B"), (&self.m, "M"), (&self.n_a, "N_a"), (&self.n_b, "N_b"), (&self.q, "Q"), (&self.r, "R")] {
            ensure_finite(m, name)?;
        }
        if min_sym_eigenvalue(&self.q) <= 0.0 || min_sym_eigenvalue(&self.r) <= 0.0 {
            return Err(NumericsError::InvalidArgument("Q and R must be positive definite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiSolution {
    pub p: Mat,
    pub y: Mat,
    pub eps: f64,
    /// `−λ_max` of the verified block.
    pub margin: f64,
    /// `x₀ᵀP⁻¹x₀` when a cost state was supplied.
    pub cost: Option<f64>,
}

impl LmiSolution {
    pub fn gain(&self) -> Mat {
        let p_inv = self.p.clone().try_inverse().expect("verified P is positive definite");
        &self.y * p_inv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpOutcome {
    Feasible(LmiSolution),
    Infeasible { reason: String },
}

impl SdpOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, SdpOutcome::Feasible(_))
    }
}

/// Assembles the robust synthesis block at `(P, Y, ε)` directly from the
/// problem matrices. The block must be negative definite for a valid gain.
pub fn robust_block(problem: &SdpProblem, p: &Mat, y: &Mat, eps: f64) -> Mat {
    let n = problem.state_dim();
    let mi = problem.input_dim();
    let kn = problem.m.ncols();
    let (o1, o2, o3, o4, o5) = (0, n, 2 * n, 2 * n + kn, 3 * n + kn);
    let dim = o5 + mi;
    let q_inv = problem.q.clone().try_inverse().unwrap_or_else(|| Mat::zeros(n, n));
    let r_inv = problem.r.clone().try_inverse().unwrap_or_else(|| Mat::zeros(mi, mi));

    let next = &problem.a * p + &problem.b * y;
    let unc = &problem.n_a * p + &problem.n_b * y;
    let mut out = Mat::zeros(dim, dim);
    out.view_mut((o1, o1), (n, n)).copy_from(&(-p + &problem.m * problem.m.transpose() * eps));
    out.view_mut((o1, o2), (n, n)).copy_from(&next);
    out.view_mut((o2, o1), (n, n)).copy_from(&next.transpose());
    out.view_mut((o2, o2), (n, n)).copy_from(&(-p));
    out.view_mut((o3, o2), (kn, n)).copy_from(&unc);
    out.view_mut((o2, o3), (n, kn)).copy_from(&unc.transpose());
    out.view_mut((o3, o3), (kn, kn)).copy_from(&(-Mat::identity(kn, kn) * eps));
    out.view_mut((o4, o2), (n, n)).copy_from(p);
    out.view_mut((o2, o4), (n, n)).copy_from(&p.transpose());
    out.view_mut((o4, o4), (n, n)).copy_from(&(-q_inv));
    out.view_mut((o5, o2), (mi, n)).copy_from(y);
    out.view_mut((o2, o5), (n, mi)).copy_from(&y.transpose());
    out.view_mut((o5, o5), (mi, mi)).copy_from(&(-r_inv));
    out
}

/// Solves the robust synthesis LMI with a log-det barrier method.
///
/// A candidate is only reported feasible after [`robust_block`] at the
/// returned point has `λ_max ≤ −tol`, `P ≻ 0` and `ε > 0`.
pub fn solve_lmi(problem: &SdpProblem) -> Result<SdpOutcome> {
    problem.validate()?;
    let layout = Layout::new(problem);
    let margin = 2.0 * problem.tol;

    // Phase I: maximize the smallest eigenvalue of −block, stopping as soon as
    // it exceeds the required margin.
    let mut z0 = layout.initial_point();
    let lmi = layout.negated_affine(problem);
    let s0 = (-min_sym_eigenvalue(&lmi.eval(&z0))).max(0.0) + 1.0;
    z0.push(s0);
    let phase1 = vec![lmi.with_shift_variable()];
    let nv1 = z0.len();
    let mut objective = vec![0.0; nv1];
    objective[nv1 - 1] = 1.0;
    let mut solver = Barrier::new(&phase1, objective, problem.max_newton_steps);
    let found = solver.path_follow(&mut z0, |z, lower| {
        let s = z[nv1 - 1];
        if s < -margin {
            Stop::Done
        } else if lower > -margin {
            Stop::Infeasible
        } else {
            Stop::Continue
        }
    });
    if found != Stop::Done {
        return Ok(SdpOutcome::Infeasible {
            reason: match found {
                Stop::Infeasible => "phase I lower bound certifies no strictly feasible point".into(),
                _ => "phase I did not reach the required margin".into(),
            },
        });
    }
    z0.pop();

    // Phase II: recenter inside the margin-shifted set, then optionally
    // drive the guaranteed cost down.
    let shifted = lmi.shifted(margin);
    let mut z = z0;
    match &problem.cost_state {
        None => {
            let cons = vec![shifted];
            let mut solver = Barrier::new(&cons, vec![0.0; z.len()], problem.max_newton_steps);
            solver.center(&mut z, 0.0);
        }
        Some(x0) => {
            let p = layout.p_of(&z);
            let gamma0 = match p.clone().cholesky() {
                Some(ch) => {
                    let x = Mat::from_column_slice(x0.len(), 1, x0);
                    (x.transpose() * ch.solve(&x))[(0, 0)] + 1.0
                }
                None => 1.0,
            };
            z.push(gamma0);
            let nv = z.len();
            let cons = vec![shifted.with_extra_variable(), layout.cost_affine(x0)];
            let mut objective = vec![0.0; nv];
            objective[nv - 1] = 1.0;
            let mut solver = Barrier::new(&cons, objective, problem.max_newton_steps);
            solver.path_follow(&mut z, |z, lower| {
                if z[nv - 1] - lower <= 1e-9 * (1.0 + z[nv - 1].abs()) {
                    Stop::Done
                } else {
                    Stop::Continue
                }
            });
            z.pop();
        }
    }

    let (p, y, eps) = layout.unpack(&z);
    Ok(verify(problem, p, y, eps))
}

fn verify(problem: &SdpProblem, p: Mat, y: Mat, eps: f64) -> SdpOutcome {
    let block = robust_block(problem, &p, &y, eps);
    let lam = max_sym_eigenvalue(&block);
    if !(lam <= -problem.tol) {
        return SdpOutcome::Infeasible { reason: format!("verification failed: λ_max = {lam:e}") };
    }
    if !(min_sym_eigenvalue(&p) > 0.0) || !(eps > 0.0) {
        return SdpOutcome::Infeasible { reason: "verification failed: P or ε not positive".into() };
    }
    let cost = problem.cost_state.as_ref().and_then(|x0| {
        let x = Mat::from_column_slice(x0.len(), 1, x0);
        p.clone().cholesky().map(|ch| (x.transpose() * ch.solve(&x))[(0, 0)])
    });
    SdpOutcome::Feasible(LmiSolution { p, y, eps, margin: -lam, cost })
}

/// Variable packing: upper triangle of P, Y column-major, then ε.
struct Layout {
    n: usize,
    mi: usize,
    kn: usize,
}

impl Layout {
    fn new(problem: &SdpProblem) -> Self {
        Self { n: problem.state_dim(), mi: problem.input_dim(), kn: problem.m.ncols() }
    }

    fn n_p(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn n_vars(&self) -> usize {
        self.n_p() + self.mi * self.n + 1
    }

    fn p_unit(&self, idx: usize) -> Mat {
        let mut e = Mat::zeros(self.n, self.n);
        let mut k = 0;
        for j in 0..self.n {
            for i in 0..=j {
                if k == idx {
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                    return e;
                }
                k += 1;
            }
        }
        unreachable!("P index out of range")
    }

    fn initial_point(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.n_vars()];
        let mut k = 0;
        for j in 0..self.n {
            for i in 0..=j {
                if i == j {
                    z[k] = 1e-2;
                }
                k += 1;
            }
        }
        z[self.n_vars() - 1] = 1e-2;
        z
    }

    fn p_of(&self, z: &[f64]) -> Mat {
        let mut p = Mat::zeros(self.n, self.n);
        let mut k = 0;
        for j in 0..self.n {
            for i in 0..=j {
                p[(i, j)] = z[k];
                p[(j, i)] = z[k];
                k += 1;
            }
        }
        p
    }

    fn unpack(&self, z: &[f64]) -> (Mat, Mat, f64) {
        let p = self.p_of(z);
        let y = Mat::from_column_slice(self.mi, self.n, &z[self.n_p()..self.n_p() + self.mi * self.n]);
        (p, y, z[self.n_vars() - 1])
    }

    /// `−block(z) = G₀ + Σ zᵢGᵢ`, assembled per unknown.
    fn negated_affine(&self, pr: &SdpProblem) -> Affine {
        let (n, mi, kn) = (self.n, self.mi, self.kn);
        let (o1, o2, o3, o4, o5) = (0, n, 2 * n, 2 * n + kn, 3 * n + kn);
        let dim = o5 + mi;
        let mut g0 = Mat::zeros(dim, dim);
        g0.view_mut((o4, o4), (n, n)).copy_from(&pr.q.clone().try_inverse().expect("Q checked"));
        g0.view_mut((o5, o5), (mi, mi)).copy_from(&pr.r.clone().try_inverse().expect("R checked"));

        let mut terms = Vec::with_capacity(self.n_vars());
        for idx in 0..self.n_p() {
            let e = self.p_unit(idx);
            let mut g = Mat::zeros(dim, dim);
            place(&mut g, o1, o1, &e);
            place_pair(&mut g, o1, o2, &(-(&pr.a * &e)));
            place(&mut g, o2, o2, &e);
            place_pair(&mut g, o3, o2, &(-(&pr.n_a * &e)));
            place_pair(&mut g, o4, o2, &(-&e));
            terms.push(g);
        }
        for c in 0..n {
            for r in 0..mi {
                let mut e = Mat::zeros(mi, n);
                e[(r, c)] = 1.0;
                let mut g = Mat::zeros(dim, dim);
                place_pair(&mut g, o1, o2, &(-(&pr.b * &e)));
                place_pair(&mut g, o3, o2, &(-(&pr.n_b * &e)));
                place_pair(&mut g, o5, o2, &(-&e));
                terms.push(g);
            }
        }
        let mut g = Mat::zeros(dim, dim);
        place(&mut g, o1, o1, &(-(&pr.m * pr.m.transpose())));
        place(&mut g, o3, o3, &Mat::identity(kn, kn));
        terms.push(g);
        Affine { constant: g0, terms }
    }

    /// `[γ x₀ᵀ; x₀ P] ≻ 0` over variables `(z, γ)`.
    fn cost_affine(&self, x0: &[f64]) -> Affine {
        let n = self.n;
        let dim = n + 1;
        let mut constant = Mat::zeros(dim, dim);
        for i in 0..n {
            constant[(0, i + 1)] = x0[i];
            constant[(i + 1, 0)] = x0[i];
        }
        let mut terms = Vec::with_capacity(self.n_vars() + 1);
        for idx in 0..self.n_p() {
            let mut g = Mat::zeros(dim, dim);
            g.view_mut((1, 1), (n, n)).copy_from(&self.p_unit(idx));
            terms.push(g);
        }
        for _ in self.n_p()..self.n_vars() {
            terms.push(Mat::zeros(dim, dim));
        }
        let mut g = Mat::zeros(dim, dim);
        g[(0, 0)] = 1.0;
        terms.push(g);
        Affine { constant, terms }
    }
}

fn place(g: &mut Mat, r: usize, c: usize, blk: &Mat) {
    let mut v = g.view_mut((r, c), blk.shape());
    v += blk;
}

fn place_pair(g: &mut Mat, r: usize, c: usize, blk: &Mat) {
    place(g, r, c, blk);
    place(g, c, r, &blk.transpose());
}

#[derive(Clone)]
struct Affine {
    constant: Mat,
    terms: Vec<Mat>,
}

impl Affine {
    fn eval(&self, z: &[f64]) -> Mat {
        let mut out = self.constant.clone();
        for (zi, t) in z.iter().zip(&self.terms) {
            if *zi != 0.0 {
                out += t * *zi;
            }
        }
        out
    }

    fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn with_shift_variable(&self) -> Affine {
        let mut out = self.clone();
        out.terms.push(Mat::identity(self.dim(), self.dim()));
        out
    }

    fn with_extra_variable(&self) -> Affine {
        let mut out = self.clone();
        out.terms.push(Mat::zeros(self.dim(), self.dim()));
        out
    }

    fn shifted(&self, margin: f64) -> Affine {
        let mut out = self.clone();
        out.constant -= Mat::identity(self.dim(), self.dim()) * margin;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stop {
    Continue,
    Done,
    Infeasible,
}

const BALL_RADIUS: f64 = 1e6;

struct Barrier<'a> {
    constraints: &'a [Affine],
    objective: Vec<f64>,
    budget: usize,
}

impl<'a> Barrier<'a> {
    fn new(constraints: &'a [Affine], objective: Vec<f64>, budget: usize) -> Self {
        Self { constraints, objective, budget }
    }

    fn nu(&self) -> f64 {
        self.constraints.iter().map(|c| c.dim() as f64).sum::<f64>() + 1.0
    }

    /// `t·cᵀz − Σ log det Fⱼ(z) − log(R² − ‖z‖²)`, or `None` outside the domain.
    fn value(&self, z: &[f64], t: f64) -> Option<f64> {
        let ball = BALL_RADIUS * BALL_RADIUS - z.iter().map(|v| v * v).sum::<f64>();
        if !(ball > 0.0) {
            return None;
        }
        let mut f = t * dot(&self.objective, z) - ball.ln();
        for c in self.constraints {
            let ch = c.eval(z).cholesky()?;
            f -= 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        f.is_finite().then_some(f)
    }

    fn newton_direction(&self, z: &[f64], t: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let nv = z.len();
        let mut grad = Mat::from_fn(nv, 1, |i, _| t * self.objective[i]);
        let mut hess = Mat::zeros(nv, nv);
        for c in self.constraints {
            let ch = c.eval(z).cholesky()?;
            let l = ch.l();
            let whitened: Vec<Mat> = c
                .terms
                .iter()
                .map(|fi| {
                    let tmp = l.solve_lower_triangular(fi).expect("triangular factor nonsingular");
                    l.solve_lower_triangular(&tmp.transpose()).expect("triangular factor nonsingular")
                })
                .collect();
            for i in 0..nv {
                grad[(i, 0)] -= whitened[i].trace();
                for j in 0..=i {
                    let hij = whitened[i].dot(&whitened[j].transpose());
                    hess[(i, j)] += hij;
                    if i != j {
                        hess[(j, i)] += hij;
                    }
                }
            }
        }
        let ball = BALL_RADIUS * BALL_RADIUS - z.iter().map(|v| v * v).sum::<f64>();
        for i in 0..nv {
            grad[(i, 0)] += 2.0 * z[i] / ball;
            hess[(i, i)] += 2.0 / ball;
            for j in 0..nv {
                hess[(i, j)] += 4.0 * z[i] * z[j] / (ball * ball);
            }
        }
        let scale = hess.diagonal().amax().max(1e-300);
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&(-&grad)),
            None => {
                let mut reg = hess.clone();
                for i in 0..nv {
                    reg[(i, i)] += 1e-12 * scale;
                }
                reg.lu().solve(&(-&grad))?
            }
        };
        Some((step.iter().copied().collect(), grad.iter().copied().collect()))
    }

    /// Damped Newton centering at barrier parameter `t`. Returns false if the
    /// step budget ran out.
    fn center(&mut self, z: &mut Vec<f64>, t: f64) -> bool {
        self.center_with(z, t, &mut |_| false)
    }

    fn center_with(&mut self, z: &mut Vec<f64>, t: f64, early: &mut dyn FnMut(&[f64]) -> bool) -> bool {
        let mut fz = match self.value(z, t) {
            Some(v) => v,
            None => return false,
        };
        for _ in 0..100 {
            if self.budget == 0 {
                return false;
            }
            self.budget -= 1;
            let Some((dz, grad)) = self.newton_direction(z, t) else { return false };
            let slope = dot(&grad, &dz);
            let decrement = -slope;
            if !(decrement > 1e-14) {
                return true;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + alpha * b).collect();
                if let Some(ft) = self.value(&trial, t) {
                    if ft <= fz + 0.25 * alpha * slope {
                        *z = trial;
                        fz = ft;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return true;
            }
            if early(z) {
                return true;
            }
            if decrement / 2.0 < 1e-10 {
                return true;
            }
        }
        true
    }

    /// Path following on `t`. `check` receives the iterate and a lower bound
    /// on the optimal objective (valid after each centering).
    fn path_follow(&mut self, z: &mut Vec<f64>, mut check: impl FnMut(&[f64], f64) -> Stop) -> Stop {
        let nu = self.nu();
        let mut t = 1.0;
        for _ in 0..60 {
            let mut hit = false;
            let ok = {
                let mut early = |zz: &[f64]| {
                    hit = check(zz, f64::NEG_INFINITY) == Stop::Done;
                    hit
                };
                self.center_with(z, t, &mut early)
            };
            if hit {
                return Stop::Done;
            }
            let obj = dot(&self.objective, z);
            let verdict = check(z, obj - nu / t);
            if verdict != Stop::Continue {
                return verdict;
            }
            if !ok || nu / t < 1e-12 {
                return Stop::Continue;
            }
            t *= 8.0;
        }
        Stop::Continue
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
