//! Lifecycle of the stale factorization used to precondition Krylov solves.

use std::sync::Arc;

use crate::krylov::{KrylovMethod, KrylovOutcome};
use crate::ldl::{factorize_qdef_escalating, factorize_spd, FactorHandle, LdlError, Symbolic};
use crate::sparse::{DiagMat, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReusePolicy {
    /// Refresh when a solve used more than `ceil(refresh_frac · budget)` iterations.
    pub refresh_frac: f64,
    pub budget: usize,
    /// Refactorize and re-solve once when a Krylov solve fails.
    pub retry: bool,
}

impl ReusePolicy {
    pub fn gmres() -> Self {
        ReusePolicy {
            refresh_frac: 0.51,
            budget: 100,
            retry: true,
        }
    }

    pub fn pcg() -> Self {
        ReusePolicy {
            refresh_frac: 0.51,
            budget: 200,
            retry: true,
        }
    }

    pub fn threshold(&self) -> usize {
        (self.refresh_frac * self.budget as f64 - 1e-9).ceil() as usize
    }
}

/// Absolute Krylov tolerance: `min(0.1, 0.8μ)` for GMRES, `0.1·tol` for PCG.
pub fn krylov_tol(method: KrylovMethod, mu: f64, tol: f64) -> f64 {
    match method {
        KrylovMethod::Gmres => (0.8 * mu).min(0.1),
        KrylovMethod::Pcg => 0.1 * tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Refresh,
}

/// Refresh iff some solve of the step exceeded the threshold or did not converge.
pub fn after_ipm_step(outcomes: &[&KrylovOutcome], policy: &ReusePolicy) -> Decision {
    let t = policy.threshold();
    if outcomes.iter().any(|o| o.iterations > t || !o.converged) {
        Decision::Refresh
    } else {
        Decision::Keep
    }
}

/// Owns the active factorization and counts rebuilds.
#[derive(Debug)]
pub struct PrecondManager {
    pub policy: ReusePolicy,
    handle: Option<FactorHandle>,
    symbolic: Option<Arc<Symbolic>>,
    pending: bool,
    factorizations: usize,
    escalations: u32,
    step: Vec<(usize, bool)>,
}

impl PrecondManager {
    pub fn new(policy: ReusePolicy) -> Self {
        PrecondManager {
            policy,
            handle: None,
            symbolic: None,
            pending: false,
            factorizations: 0,
            escalations: 0,
            step: Vec::new(),
        }
    }

    pub fn needs_refresh(&self) -> bool {
        self.handle.is_none() || self.pending
    }

    pub fn handle(&self) -> Option<&FactorHandle> {
        self.handle.as_ref()
    }

    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    pub fn escalations(&self) -> u32 {
        self.escalations
    }

    /// Factorizes a quasi-definite matrix and makes it the active preconditioner.
    pub fn refresh_qdef(
        &mut self,
        k: &SymMatrix,
        positive: usize,
        threshold: f64,
        theta: DiagMat,
        ipm_iteration: usize,
    ) -> Result<&FactorHandle, LdlError> {
        let (h, esc) = factorize_qdef_escalating(k, positive, threshold, self.symbolic.as_ref())?;
        self.escalations += esc;
        self.install(h.with_snapshot(theta, ipm_iteration));
        Ok(self.handle.as_ref().expect("just installed"))
    }

    /// Factorizes an SPD matrix and makes it the active preconditioner.
    pub fn refresh_spd(&mut self, k: &SymMatrix, theta: DiagMat, ipm_iteration: usize) -> Result<&FactorHandle, LdlError> {
        let h = factorize_spd(k, self.symbolic.as_ref())?;
        self.install(h.with_snapshot(theta, ipm_iteration));
        Ok(self.handle.as_ref().expect("just installed"))
    }

    fn install(&mut self, h: FactorHandle) {
        self.symbolic = Some(Arc::clone(h.symbolic()));
        self.handle = Some(h);
        self.factorizations += 1;
        self.pending = false;
    }

    /// Records one Krylov solve of the current IPM step.
    pub fn record(&mut self, o: &KrylovOutcome) {
        self.step.push((o.iterations, o.converged));
    }

    /// Applies the refresh rule to the solves recorded since the last call.
    pub fn end_step(&mut self) -> Decision {
        let t = self.policy.threshold();
        let refresh = self.step.iter().any(|&(its, conv)| its > t || !conv);
        self.step.clear();
        if refresh {
            self.pending = true;
            Decision::Refresh
        } else {
            Decision::Keep
        }
    }
}
