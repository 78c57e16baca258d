//! A bank of trimmed estimators with different trimming levels, tuned online
//! by leave-one-out cross-validation on agreed deleted residuals.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::lbf::{self, accumulate, regression_vector, theta_center, Frame};
use crate::linalg::{hermitize, quad_form, HpdFactor};
use crate::robust::{
    frame_errors, initial_errors, nested_trim_sets, noise_variance, theta_variance, trim_set, AdaptiveState,
    InitMethod, TrimSets,
};
use crate::tracking::{MPolicy, Step, Tracker};
use crate::{Error, Result, C64};

/// Leverages at or above this are treated as degenerate.
const LEVERAGE_LIMIT: f64 = 1.0 - 1e-12;

/// Self-influence `c = ψᴴ P⁻¹ ψ` of a sample on its own fit.
pub fn leverage(p_inv: &DMatrix<C64>, psi0: &DVector<C64>) -> Result<f64> {
    gate_leverage(quad_form(p_inv, psi0))
}

/// [`leverage`] from a Cholesky factor of `P` instead of its inverse.
pub fn leverage_factored(factor: &HpdFactor, psi0: &DVector<C64>) -> Result<f64> {
    gate_leverage(psi0.dotc(&factor.solve(psi0)).re)
}

fn gate_leverage(c: f64) -> Result<f64> {
    if !(c < LEVERAGE_LIMIT) {
        return Err(Error::DegenerateLeverage { c });
    }
    Ok(c.max(0.0))
}

/// `ε° = ε / (1 − c)`.
pub fn deleted_residual(eps: C64, c: f64) -> Result<C64> {
    if !(c < LEVERAGE_LIMIT) {
        return Err(Error::DegenerateLeverage { c });
    }
    Ok(eps / (1.0 - c))
}

/// Inverse normal matrix and right-hand side of one trimming level.
#[derive(Clone, Debug)]
pub struct Level {
    pub p_inv: DMatrix<C64>,
    pub rhs: DVector<C64>,
    /// Computed by a direct solve because the low-rank update failed.
    pub fallback: bool,
}

impl Level {
    pub fn beta(&self) -> DVector<C64> {
        &self.p_inv * &self.rhs
    }
}

/// Starting from the most trimmed level, adds back the samples each less
/// trimmed level retains, using Woodbury updates of the inverse:
///
/// `P_{i−1}⁻¹ = P_i⁻¹ − U (I + Ψᴴ U)⁻¹ Uᴴ`, `U = P_i⁻¹ Ψ`, `p_{i−1} = p_i + Ψ y*`.
///
/// `sets` must be nested (ascending trimming). Returns one level per set in
/// the same order; the last entry is `top` itself.
pub fn downdate_chain(frame: &Frame, basis: &BasisSet, sets: &[TrimSets], top: Level) -> Result<Vec<Level>> {
    let count = sets.len();
    if count == 0 {
        return Ok(vec![]);
    }
    let mut levels = vec![top];
    for i in (1..count).rev() {
        let current = levels.last().expect("chain is non-empty");
        let added: Vec<usize> = sets[i].rejected.iter().copied().filter(|&p| sets[i - 1].contains(p)).collect();
        let level = match woodbury_add(frame, basis, current, &added) {
            Some(level) => level,
            None => Level { fallback: true, ..direct_level(frame, basis, &sets[i - 1])? },
        };
        levels.push(level);
    }
    levels.reverse();
    Ok(levels)
}

fn woodbury_add(frame: &Frame, basis: &BasisSet, current: &Level, added: &[usize]) -> Option<Level> {
    if added.is_empty() {
        return Some(Level { fallback: false, ..current.clone() });
    }
    let cols: Vec<_> = added.iter().map(|&p| regression_vector(frame, basis, p)).collect();
    let psi = DMatrix::from_columns(&cols);
    let u = &current.p_inv * &psi;
    let mut s = psi.adjoint() * &u;
    for d in 0..s.nrows() {
        s[(d, d)] += C64::new(1.0, 0.0);
    }
    let s_inv_ut = Cholesky::new(s)?.solve(&u.adjoint());
    let mut p_inv = &current.p_inv - &u * s_inv_ut;
    hermitize(&mut p_inv);
    if p_inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    let mut rhs = current.rhs.clone();
    for (col, &p) in cols.iter().zip(added) {
        rhs += col * frame.y()[p].conj();
    }
    Some(Level { p_inv, rhs, fallback: false })
}

fn direct_level(frame: &Frame, basis: &BasisSet, sets: &TrimSets) -> Result<Level> {
    let ne = accumulate(frame, basis, &sets.retained, None);
    let factor = HpdFactor::new(ne.matrix)?;
    Ok(Level { p_inv: factor.inverse(), rhs: ne.rhs, fallback: false })
}

/// Solves every level of a nested family by adding the samples each less
/// trimmed level retains to the normal equations and refactoring.
fn refactor_levels(frame: &Frame, basis: &BasisSet, sets: &[TrimSets]) -> Vec<Option<Fit>> {
    let Some(last) = sets.last() else {
        return vec![];
    };
    let mut fits = vec![None; sets.len()];
    let mut ne = accumulate(frame, basis, &last.retained, None);
    for i in (0..sets.len()).rev() {
        if let Some(outer) = sets.get(i + 1) {
            let added: Vec<usize> = outer.rejected.iter().copied().filter(|&p| sets[i].contains(p)).collect();
            if !added.is_empty() {
                let extra = accumulate(frame, basis, &added, None);
                ne.matrix += extra.matrix;
                ne.rhs += extra.rhs;
            }
        }
        fits[i] = HpdFactor::new(ne.matrix.clone()).ok().map(|factor| Fit::Factor { factor, rhs: ne.rhs.clone() });
    }
    fits
}

fn factored_level(frame: &Frame, basis: &BasisSet, sets: &TrimSets) -> Option<Fit> {
    let ne = accumulate(frame, basis, &sets.retained, None);
    HpdFactor::new(ne.matrix).ok().map(|factor| Fit::Factor { factor, rhs: ne.rhs })
}

/// A solved bank member, held either as an explicit inverse or a factor.
#[derive(Clone, Debug)]
enum Fit {
    Inverse(Level),
    Factor { factor: HpdFactor, rhs: DVector<C64> },
}

impl Fit {
    fn beta(&self) -> DVector<C64> {
        match self {
            Fit::Inverse(level) => level.beta(),
            Fit::Factor { factor, rhs } => factor.solve(rhs),
        }
    }

    fn leverage(&self, psi0: &DVector<C64>) -> Result<f64> {
        match self {
            Fit::Inverse(level) => leverage(&level.p_inv, psi0),
            Fit::Factor { factor, .. } => leverage_factored(factor, psi0),
        }
    }
}

/// Circular registers of agreed deleted residuals and their running sums of
/// squared moduli, one per bank member.
#[derive(Clone, Debug)]
pub struct CrossValidation {
    window: usize,
    registers: Vec<Vec<C64>>,
    stats: Vec<f64>,
    pos: usize,
    events: usize,
}

impl CrossValidation {
    pub fn new(members: usize, window: usize) -> Self {
        Self {
            window,
            registers: vec![vec![C64::new(0.0, 0.0); window]; members],
            stats: vec![0.0; members],
            pos: 0,
            events: 0,
        }
    }

    /// Pushes one deleted residual per member on an agreed event; `None`
    /// leaves everything unchanged.
    pub fn update(&mut self, deleted: Option<&[C64]>) {
        let Some(deleted) = deleted else { return };
        let l = self.pos;
        for ((reg, e), &d) in self.registers.iter_mut().zip(&mut self.stats).zip(deleted) {
            *e += d.norm_sqr() - reg[l].norm_sqr();
            reg[l] = d;
        }
        self.pos = (l + 1) % self.window;
        self.events += 1;
        if self.pos == 0 {
            // re-sum once per lap so rounding cannot accumulate
            for (reg, e) in self.registers.iter().zip(&mut self.stats) {
                *e = reg.iter().map(|v| v.norm_sqr()).sum();
            }
        }
    }

    pub fn stats(&self) -> &[f64] {
        &self.stats
    }

    pub fn register(&self, member: usize) -> &[C64] {
        &self.registers[member]
    }

    /// Index of the register slot holding the oldest residual.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Number of agreed events so far.
    pub fn events(&self) -> usize {
        self.events
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Whether the registers have been filled at least once.
    pub fn warmed_up(&self) -> bool {
        self.events >= self.window
    }
}

/// `argmin E_i`, ties to the smallest index.
pub fn select_index(stats: &[f64]) -> usize {
    let mut best = 0;
    for (i, &e) in stats.iter().enumerate() {
        if e < stats[best] {
            best = i;
        }
    }
    best
}

/// Which estimate ranks the errors that decide each member's trim set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ranking {
    /// One ranking from the previously selected member; trim sets are
    /// nested and the Woodbury chain is used.
    #[default]
    Shared,
    /// Every member ranks with its own previous estimate and is solved
    /// directly.
    PerMember,
}

/// How the members of a shared ranking are solved. Both give the same
/// estimates up to rounding.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelSolver {
    /// Add the returning samples to the normal equations and refactor.
    #[default]
    Refactor,
    /// Woodbury updates of the explicit inverse, see [`downdate_chain`].
    Woodbury,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankConfig {
    /// Strictly increasing trimming levels.
    pub deltas: Vec<usize>,
    /// Decision window `L`.
    pub window: usize,
    pub ranking: Ranking,
    pub solver: LevelSolver,
}

impl BankConfig {
    /// Levels `δ_i = int[μ_i K]`.
    pub fn from_mu(mus: &[f64], width: usize, window: usize, ranking: Ranking) -> Result<Self> {
        if mus.iter().any(|mu| !(0.0..1.0).contains(mu)) {
            return Err(Error::InvalidArgument("trimming fractions must lie in [0, 1)".into()));
        }
        let deltas = mus.iter().map(|mu| (mu * width as f64).floor() as usize).collect();
        let cfg = Self { deltas, window, ranking, solver: LevelSolver::default() };
        cfg.check_levels()?;
        Ok(cfg)
    }

    /// The defaults: `μ ∈ {0.005, 0.05, 0.15}`, `L = 40`.
    pub fn standard(width: usize) -> Result<Self> {
        Self::from_mu(&[0.005, 0.05, 0.15], width, 40, Ranking::Shared)
    }

    fn check_levels(&self) -> Result<()> {
        if self.deltas.is_empty() {
            return Err(Error::InvalidArgument("bank needs at least one member".into()));
        }
        if self.deltas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "trimming levels {:?} are not strictly increasing",
                self.deltas
            )));
        }
        if self.window == 0 {
            return Err(Error::InvalidArgument("decision window must be positive".into()));
        }
        Ok(())
    }

    /// Checks the levels against a window width and the largest model size.
    pub fn validate(&self, width: usize, n: usize, m_max: usize) -> Result<()> {
        self.check_levels()?;
        let top = *self.deltas.last().expect("checked non-empty");
        if top >= width || width - top < n * m_max {
            return Err(Error::Identifiability { retained: width.saturating_sub(top), required: n * m_max });
        }
        Ok(())
    }
}

/// Per-window details of the last bank step.
#[derive(Clone, Debug, PartialEq)]
pub struct BankStep {
    pub selected: usize,
    pub agreed: bool,
    pub stats: Vec<f64>,
    /// Chain levels that needed a direct solve.
    pub fallbacks: usize,
}

struct Member {
    prev: Option<(DVector<C64>, usize)>,
    theta: Option<Vec<C64>>,
}

/// Parallel trimmed estimators sharing a basis count, with the output taken
/// from the member whose recent agreed deleted residuals are smallest.
/// Until `L` agreed events have accrued the middle member is used.
pub struct BankTracker {
    bases: Vec<BasisSet>,
    cfg: BankConfig,
    state: AdaptiveState,
    init: InitMethod,
    cv: CrossValidation,
    members: Vec<Member>,
    selected: usize,
    last: Option<BankStep>,
}

impl BankTracker {
    pub fn new(
        basis: &BasisSet,
        order: usize,
        cfg: BankConfig,
        policy: MPolicy,
        eta0: f64,
        init: InitMethod,
    ) -> Result<Self> {
        cfg.validate(basis.width(), order, 1)?;
        let state = AdaptiveState::new(policy, basis.lambdas().to_vec(), order, eta0)?;
        let p = cfg.deltas.len();
        Ok(Self {
            bases: basis.prefixes(),
            cv: CrossValidation::new(p, cfg.window),
            members: (0..p).map(|_| Member { prev: None, theta: None }).collect(),
            selected: p / 2,
            cfg,
            state,
            init,
            last: None,
        })
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn cross_validation(&self) -> &CrossValidation {
        &self.cv
    }

    pub fn last_step(&self) -> Option<&BankStep> {
        self.last.as_ref()
    }

    fn shared_sets(&self, frame: &Frame, basis: &BasisSet, required: usize) -> Result<Vec<TrimSets>> {
        let top = *self.cfg.deltas.last().expect("non-empty");
        let errors = match &self.members[self.selected].prev {
            Some((beta, pm)) => frame_errors(beta, &self.bases[pm - 1], frame),
            None => initial_errors(frame, basis, self.init, top, &[])?,
        };
        nested_trim_sets(&errors, &self.cfg.deltas, &[], required)
    }

    fn member_sets(&self, frame: &Frame, basis: &BasisSet, required: usize) -> Result<Vec<TrimSets>> {
        let mut init = None;
        self.cfg
            .deltas
            .iter()
            .zip(&self.members)
            .map(|(&delta, member)| {
                let errors = match &member.prev {
                    Some((beta, pm)) => frame_errors(beta, &self.bases[pm - 1], frame),
                    None => match &init {
                        Some(e) => Vec::clone(e),
                        None => {
                            let e = initial_errors(frame, basis, self.init, delta, &[])?;
                            init = Some(e.clone());
                            e
                        }
                    },
                };
                trim_set(&errors, delta, &[], required)
            })
            .collect()
    }

    /// Solved members; `None` where the fit failed.
    fn solve_levels(&self, frame: &Frame, basis: &BasisSet, sets: &[TrimSets]) -> (Vec<Option<Fit>>, usize) {
        match (self.cfg.ranking, self.cfg.solver) {
            (Ranking::Shared, LevelSolver::Refactor) => return (refactor_levels(frame, basis, sets), 0),
            (Ranking::Shared, LevelSolver::Woodbury) => {
                let top = direct_level(frame, basis, sets.last().expect("non-empty"));
                if let Ok(levels) = top.and_then(|top| downdate_chain(frame, basis, sets, top)) {
                    let fallbacks = levels.iter().filter(|l| l.fallback).count();
                    return (levels.into_iter().map(|l| Some(Fit::Inverse(l))).collect(), fallbacks);
                }
            }
            (Ranking::PerMember, _) => {}
        }
        (sets.iter().map(|s| factored_level(frame, basis, s)).collect(), 0)
    }
}

impl Tracker for BankTracker {
    fn step(&mut self, frame: &Frame) -> Result<Step> {
        let n = frame.order();
        let width = frame.width();
        let center = frame.half();
        self.state.prime(frame);
        let top = *self.cfg.deltas.last().expect("non-empty");
        let m = self.state.next_m(width - top, self.bases.len());
        let basis = self.bases[m - 1].clone();
        let required = n * m;

        let sets = match self.cfg.ranking {
            Ranking::Shared => self.shared_sets(frame, &basis, required)?,
            Ranking::PerMember => self.member_sets(frame, &basis, required)?,
        };
        let (levels, fallbacks) = self.solve_levels(frame, &basis, &sets);

        let psi0 = regression_vector(frame, &basis, center);
        let mut deleted = Vec::with_capacity(levels.len());
        let mut agreed = sets.iter().all(|s| s.contains(center));
        for (member, level) in self.members.iter_mut().zip(&levels) {
            let Some(level) = level else {
                agreed = false;
                continue;
            };
            let beta = level.beta();
            let theta = theta_center(&beta, &basis, n);
            if agreed {
                let eps = frame.y()[center] - lbf::predict(&theta, frame.phi(center));
                match level.leverage(&psi0).and_then(|c| deleted_residual(eps, c)) {
                    Ok(d) => deleted.push(d),
                    Err(_) => agreed = false,
                }
            }
            member.theta = Some(theta);
            member.prev = Some((beta, m));
        }
        self.cv.update(agreed.then_some(deleted.as_slice()));
        if self.cv.warmed_up() {
            self.selected = select_index(self.cv.stats());
        }

        // noise variance from the most trimmed member, spread from the selected one
        let last = self.members.len() - 1;
        if let (Some(_), Some((beta, _))) = (&levels[last], &self.members[last].prev) {
            let res = lbf::residuals(frame, &basis, beta);
            let sigma_e_sq = noise_variance(&res, &sets[last].retained);
            let selected_beta = self.members[self.selected].prev.as_ref().map(|(b, _)| b).unwrap_or(beta);
            self.state.observe(sigma_e_sq, theta_variance(selected_beta, &basis, n));
        }
        self.state.observe_regressor(frame.phi(center));

        let degraded = levels[self.selected].is_none();
        let theta = self.members[self.selected].theta.clone().ok_or_else(|| Error::Numerical {
            window: frame.center(),
            reason: "selected bank member has no estimate".into(),
        })?;
        self.last = Some(BankStep { selected: self.selected, agreed, stats: self.cv.stats().to_vec(), fallbacks });
        Ok(Step { theta, m, delta: self.cfg.deltas[self.selected], degraded })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lbf::tests::{cn, jakes_basis, random_frame};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_frobenius(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn dense_inverse(frame: &Frame, basis: &BasisSet, omega: &[usize]) -> DMatrix<C64> {
        let dim = frame.order() * basis.m();
        let mut p = DMatrix::<C64>::zeros(dim, dim);
        for &j in omega {
            let psi = regression_vector(frame, basis, j);
            p += &psi * psi.adjoint();
        }
        p.try_inverse().unwrap()
    }

    #[test]
    fn leverage_examples() {
        let frame = Frame::new(0, 0, vec![C64::new(1.0, 0.0)], vec![vec![C64::new(2.0, 1.0)]]).unwrap();
        let basis = BasisSet::from_functions(vec![vec![1.0]], vec![]).unwrap();
        let p_inv = dense_inverse(&frame, &basis, &[0]);
        let psi = regression_vector(&frame, &basis, 0);
        assert!(matches!(leverage(&p_inv, &psi), Err(Error::DegenerateLeverage { .. })));
        assert_eq!(leverage(&p_inv, &DVector::zeros(1)).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let basis = jakes_basis(21, 2);
        let frame = random_frame(&mut rng, 10, 2);
        let omega: Vec<usize> = (0..21).collect();
        let p_inv = HpdFactor::new(lbf::normal_equations(&frame, &basis, &omega).unwrap().matrix).unwrap().inverse();
        let psi = regression_vector(&frame, &basis, 10);
        let dense = dense_inverse(&frame, &basis, &omega);
        let want = (psi.adjoint() * dense * &psi)[(0, 0)].re;
        assert!((leverage(&p_inv, &psi).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn deleted_residual_examples() {
        let e = C64::new(1.0, 1.0);
        assert_eq!(deleted_residual(e, 0.0).unwrap(), e);
        assert_eq!(deleted_residual(e, 0.5).unwrap(), C64::new(2.0, 2.0));
        assert!(deleted_residual(e, 1.0).is_err());
    }

    // Leave-one-out by explicit refit without the center sample.
    #[test]
    fn deleted_residual_matches_holey_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (n, m) in [(1, 1), (2, 3), (1, 4)] {
            let basis = jakes_basis(31, m);
            let frame = random_frame(&mut rng, 15, n);
            let omega: Vec<usize> = (0..31).filter(|&p| p != 4 && p != 20).collect();
            let ne = lbf::normal_equations(&frame, &basis, &omega).unwrap();
            let factor = HpdFactor::new(ne.matrix.clone()).unwrap();
            let beta = factor.solve(&ne.rhs);
            let psi0 = regression_vector(&frame, &basis, 15);
            let eps = frame.y()[15] - beta.dotc(&psi0);
            let fast = deleted_residual(eps, leverage(&factor.inverse(), &psi0).unwrap()).unwrap();

            let holey: Vec<usize> = omega.iter().copied().filter(|&p| p != 15).collect();
            let ne = lbf::normal_equations(&frame, &basis, &holey).unwrap();
            let beta_h = HpdFactor::new(ne.matrix).unwrap().solve(&ne.rhs);
            let slow = frame.y()[15] - beta_h.dotc(&psi0);
            assert!((fast - slow).norm() / slow.norm() < 1e-8);
        }
    }

    #[test]
    fn chain_matches_dense_inverses() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let basis = jakes_basis(151, 3);
        let frame = random_frame(&mut rng, 75, 3);
        let errors: Vec<C64> = (0..151).map(|_| cn(&mut rng)).collect();
        let sets = nested_trim_sets(&errors, &[1, 8, 22], &[], 9).unwrap();
        let top = direct_level(&frame, &basis, &sets[2]).unwrap();
        let levels = downdate_chain(&frame, &basis, &sets, top).unwrap();
        for (level, set) in levels.iter().zip(&sets) {
            assert!(!level.fallback);
            assert!(rel_frobenius(&level.p_inv, &dense_inverse(&frame, &basis, &set.retained)) < 1e-8);
            let ne = lbf::normal_equations(&frame, &basis, &set.retained).unwrap();
            assert!((&level.rhs - &ne.rhs).camax() < 1e-10);
        }
    }

    #[test]
    fn rank_one_update_is_sherman_morrison() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let basis = jakes_basis(21, 2);
        let frame = random_frame(&mut rng, 10, 1);
        let errors: Vec<C64> = (0..21).map(|_| cn(&mut rng)).collect();
        let sets = nested_trim_sets(&errors, &[0, 1], &[], 2).unwrap();
        let top = direct_level(&frame, &basis, &sets[1]).unwrap();
        let added = sets[1].rejected[0];
        let psi = regression_vector(&frame, &basis, added);
        let u = &top.p_inv * &psi;
        let denom = 1.0 + psi.dotc(&u).re;
        let sm = &top.p_inv - &u * u.adjoint() / C64::new(denom, 0.0);
        let levels = downdate_chain(&frame, &basis, &sets, top).unwrap();
        assert!(rel_frobenius(&levels[0].p_inv, &sm) < 1e-10);

        let single = direct_level(&frame, &basis, &sets[0]).unwrap();
        let levels = downdate_chain(&frame, &basis, &sets[..1], single.clone()).unwrap();
        assert_eq!(levels[0].p_inv, single.p_inv);
    }

    #[test]
    fn register_examples() {
        let mut cv = CrossValidation::new(1, 2);
        for _ in 0..10 {
            cv.update(Some(&[C64::new(1.0, 0.0)]));
        }
        assert_eq!(cv.stats(), &[2.0]);

        let mut cv = CrossValidation::new(3, 4);
        for _ in 0..10 {
            cv.update(None);
        }
        assert_eq!(cv.stats(), &[0.0; 3]);
        assert_eq!(cv.events(), 0);
    }

    #[test]
    fn register_replay_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let window = 7;
        let mut cv = CrossValidation::new(3, window);
        let mut history: Vec<Vec<C64>> = vec![];
        for _ in 0..500 {
            if rng.random_bool(0.6) {
                let d: Vec<C64> = (0..3).map(|_| cn(&mut rng) * rng.random_range(0.1..50.0)).collect();
                cv.update(Some(&d));
                history.push(d);
            } else {
                cv.update(None);
            }
            let recent = &history[history.len().saturating_sub(window)..];
            for i in 0..3 {
                let want: f64 = recent.iter().map(|d| d[i].norm_sqr()).sum();
                assert!((cv.stats()[i] - want).abs() <= 1e-9 * want.max(1.0));
            }
        }
        // after L agreed events the initial zeros are gone
        let mut cv = CrossValidation::new(1, 3);
        for v in [1.0, 2.0, 3.0] {
            cv.update(Some(&[C64::new(v, 0.0)]));
        }
        assert!(cv.register(0).iter().all(|v| v.re > 0.0));
    }

    #[test]
    fn select_examples() {
        assert_eq!(select_index(&[5.0, 3.0, 7.0]), 1);
        assert_eq!(select_index(&[2.0, 2.0, 2.0]), 0);
    }

    #[test]
    fn config_validation() {
        let cfg = BankConfig::standard(151).unwrap();
        assert_eq!(cfg.deltas, vec![0, 7, 22]);
        assert!(cfg.validate(151, 10, 12).is_ok());
        assert!(cfg.validate(151, 10, 13).is_err());
        assert!(BankConfig::from_mu(&[0.05, 0.05], 151, 40, Ranking::Shared).is_err());
        assert!(BankConfig::from_mu(&[0.1], 151, 0, Ranking::Shared).is_err());
    }

    #[test]
    fn shared_and_per_member_agree_on_clean_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let basis = jakes_basis(31, 2);
        let len = 80;
        let u: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        let y: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        for ranking in [Ranking::Shared, Ranking::PerMember] {
            let cfg = BankConfig { deltas: vec![0, 2, 5], window: 5, ranking, solver: LevelSolver::Refactor };
            let mut bank = BankTracker::new(&basis, 1, cfg, MPolicy::Fixed(2), 0.99, InitMethod::Lad).unwrap();
            for t in 15..len - 15 {
                let frame = Frame::from_stream(&u, &y, t, 15, 1).unwrap();
                let step = bank.step(&frame).unwrap();
                assert!(!step.degraded);
                assert!([0, 2, 5].contains(&step.delta));
            }
            assert!(bank.cross_validation().events() > 0);
        }
    }

    #[test]
    fn level_solvers_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let basis = jakes_basis(41, 3);
        let len = 200;
        let u: Vec<C64> = (0..len).map(|_| cn(&mut rng)).collect();
        let y: Vec<C64> = (0..len)
            .map(|t| {
                let spike = if rng.random::<f64>() < 0.1 { 30.0 } else { 0.0 };
                u[t] + cn(&mut rng) * (0.1 + spike)
            })
            .collect();
        let run = |solver| {
            let cfg = BankConfig { deltas: vec![1, 4, 8], window: 5, ranking: Ranking::Shared, solver };
            let mut bank = BankTracker::new(&basis, 2, cfg, MPolicy::Fixed(3), 0.99, InitMethod::Lad).unwrap();
            (20..len - 20)
                .map(|t| bank.step(&Frame::from_stream(&u, &y, t, 20, 2).unwrap()).unwrap())
                .collect::<Vec<_>>()
        };
        let (a, b) = (run(LevelSolver::Refactor), run(LevelSolver::Woodbury));
        for (x, z) in a.iter().zip(&b) {
            assert_eq!(x.delta, z.delta);
            for (p, q) in x.theta.iter().zip(&z.theta) {
                assert!((p - q).norm() < 1e-8 * (1.0 + p.norm()));
            }
        }
    }
}
