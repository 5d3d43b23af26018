//! Assembly of the closed-loop right-hand side from per-node updates.

use std::ops::Range;

use super::access::{AccessLog, NodeView, NoLog, Snapshot};
use super::kernel::{axpy, FlatMat, Vec16, MAX_DIM};
use super::{assumption_report, z_into, LeaderInput, ProtocolError, Regime, RegimeOptions};
use crate::formation::FormationSpec;
use crate::graph::Topology;
use crate::linalg::DenseMatrix;
use crate::synthesis::{GainSet, LtiModel};

/// Offsets of the controller blocks inside a flat controller state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ControlLayout {
    pub nf: usize,
    pub n: usize,
}

impl ControlLayout {
    pub fn v(&self) -> Range<usize> {
        0..self.nf * self.n
    }

    pub fn w(&self) -> Range<usize> {
        self.nf * self.n..2 * self.nf * self.n
    }

    pub fn w0(&self) -> Range<usize> {
        let s = 2 * self.nf * self.n;
        s..s + self.n
    }

    /// Row-major `N×N` edge weights.
    pub fn c_edge(&self) -> Range<usize> {
        let s = self.w0().end;
        s..s + self.nf * self.nf
    }

    pub fn c_node(&self) -> Range<usize> {
        let s = self.c_edge().end;
        s..s + self.nf
    }

    pub fn len(&self) -> usize {
        self.c_node().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linear-plant state: agent states `x` (leader first) then the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub control: ControlLayout,
}

impl StateLayout {
    pub fn new(nf: usize, n: usize) -> Self {
        Self {
            control: ControlLayout { nf, n },
        }
    }

    pub fn x(&self) -> Range<usize> {
        0..(self.control.nf + 1) * self.control.n
    }

    /// State of agent `j` (`0` is the leader).
    pub fn agent(&self, j: usize) -> Range<usize> {
        let n = self.control.n;
        j * n..(j + 1) * n
    }

    pub fn ctrl(&self) -> Range<usize> {
        let s = self.x().end;
        s..s + self.control.len()
    }

    pub fn len(&self) -> usize {
        self.ctrl().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scratch buffers and outputs of one evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub h: Vec<f64>,
    pub hdot: Vec<f64>,
    pub y: Vec<f64>,
    /// Follower inputs, `N·p`.
    pub u: Vec<f64>,
    /// Leader input.
    pub u0: Vec<f64>,
    /// Controller derivative.
    pub dctrl: Vec<f64>,
}

/// Everything needed to evaluate one regime's closed loop.
#[derive(Debug, Clone)]
pub struct Protocol {
    regime: Regime,
    options: RegimeOptions,
    n: usize,
    p: usize,
    q: usize,
    nf: usize,
    a: FlatMat,
    b: FlatMat,
    c: FlatMat,
    acl: FlatMat,
    k1: FlatMat,
    k2: FlatMat,
    /// `F` (n×q) in output regimes, `BF̃` (n×n) in state regimes.
    inj: FlatMat,
    /// `Γ` or `Γ̃`.
    gamma: FlatMat,
    /// `Q` or `Q̃⁻¹`.
    rho_mat: FlatMat,
    bts: Option<FlatMat>,
    btq: Option<FlatMat>,
    beta: f64,
    adjacency: Vec<f64>,
    pinning: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    k_edge: Vec<f64>,
    k_pin: Vec<f64>,
    leak: Vec<f64>,
    leader_input: LeaderInput,
    spec: FormationSpec,
}

impl Protocol {
    pub fn new(
        model: &LtiModel,
        gains: &GainSet,
        topo: &Topology,
        spec: &FormationSpec,
        regime: Regime,
        options: &RegimeOptions,
        leader_input: &LeaderInput,
    ) -> Result<Self, ProtocolError> {
        let (n, p, q) = (model.n(), model.p(), model.q());
        let nf = topo.n_followers();
        if n > MAX_DIM {
            return Err(ProtocolError::Dimensions(format!("n = {n} exceeds {MAX_DIM}")));
        }
        if spec.n() != n || spec.n_followers() != nf {
            return Err(ProtocolError::Dimensions(format!(
                "formation is {} followers × {} states, scenario is {nf} × {n}",
                spec.n_followers(),
                spec.n()
            )));
        }
        if gains.k1.shape() != (p, n) || gains.k2.shape() != (p, n) {
            return Err(ProtocolError::Dimensions("K₁/K₂ must be p×n".into()));
        }
        if let Some((name, _)) = assumption_report(regime, topo).into_iter().find(|(_, ok)| !ok) {
            return Err(ProtocolError::Topology { regime, check: name });
        }
        if leader_input.dim().is_some_and(|d| d != p) {
            return Err(ProtocolError::Dimensions(format!("leader input must have {p} channels")));
        }
        if !regime.allows_leader_input() && !leader_input.is_zero() {
            return Err(ProtocolError::LeaderInputNotAllowed(regime));
        }
        if !(options.delta > 0.0) {
            return Err(ProtocolError::BadDelta(options.delta));
        }

        let (inj, gamma, rho_mat) = if regime.uses_state_gains() {
            let qt = gains.q_tilde.as_ref().ok_or(ProtocolError::MissingGain("q_tilde"))?;
            let ft = gains.f_tilde.as_ref().ok_or(ProtocolError::MissingGain("f_tilde"))?;
            let gt = gains.gamma_tilde.as_ref().ok_or(ProtocolError::MissingGain("gamma_tilde"))?;
            if qt.shape() != (n, n) || ft.shape() != (p, n) || gt.shape() != (n, n) {
                return Err(ProtocolError::Dimensions("relative-state gains".into()));
            }
            let qi = qt.clone().try_inverse().ok_or(ProtocolError::MissingGain("invertible q_tilde"))?;
            (
                FlatMat::from_dense(&(&model.b * ft)),
                FlatMat::from_dense(gt),
                FlatMat::from_dense(&qi),
            )
        } else {
            let f = gains.f.as_ref().ok_or(ProtocolError::MissingGain("f"))?;
            let g = gains.gamma.as_ref().ok_or(ProtocolError::MissingGain("gamma"))?;
            let qm = gains.q_mat.as_ref().ok_or(ProtocolError::MissingGain("q_mat"))?;
            if f.shape() != (n, q) || g.shape() != (q, q) || qm.shape() != (n, n) {
                return Err(ProtocolError::Dimensions("output gains".into()));
            }
            (FlatMat::from_dense(f), FlatMat::from_dense(g), FlatMat::from_dense(qm))
        };

        let (mut bts, mut btq, mut beta) = (None, None, 0.0);
        if regime == Regime::DirectedTrackingBoundedInput {
            let s = gains.s_mat.as_ref().ok_or(ProtocolError::MissingGain("s_mat"))?;
            let qm = gains.q_mat.as_ref().ok_or(ProtocolError::MissingGain("q_mat"))?;
            if s.shape() != (n, n) {
                return Err(ProtocolError::Dimensions("S must be n×n".into()));
            }
            let eps = leader_input.certified_bound();
            if !(gains.beta >= eps) {
                return Err(ProtocolError::BetaTooSmall { beta: gains.beta, eps });
            }
            beta = gains.beta;
            bts = Some(FlatMat::from_dense(&(model.b.transpose() * s)));
            btq = Some(FlatMat::from_dense(&(model.b.transpose() * qm)));
        }

        let k_edge = match &options.k_edge {
            None => vec![1.0; nf * nf],
            Some(rows) => {
                if rows.len() != nf || rows.iter().any(|r| r.len() != nf) {
                    return Err(ProtocolError::Dimensions("k_edge must be N×N".into()));
                }
                for i in 0..nf {
                    for j in 0..nf {
                        if topo.weight(i, j) > 0.0 && !(rows[i][j] > 0.0) {
                            return Err(ProtocolError::BadOption(format!("k_edge[{i}][{j}] must be positive")));
                        }
                        if rows[i][j] != rows[j][i] {
                            return Err(ProtocolError::BadOption("k_edge must be symmetric".into()));
                        }
                    }
                }
                rows.iter().flatten().copied().collect()
            }
        };
        let k_pin = match &options.k_pin {
            None => vec![1.0; nf],
            Some(k) if k.len() == nf && k.iter().all(|&v| v > 0.0) => k.clone(),
            Some(_) => return Err(ProtocolError::BadOption("k_pin must hold N positive gains".into())),
        };
        let leak = match options.leak_eps.len() {
            0 => vec![0.0; nf],
            l if l == nf && options.leak_eps.iter().all(|&e| e >= 0.0) => options.leak_eps.clone(),
            _ => return Err(ProtocolError::BadOption("leak_eps must hold N non-negative values".into())),
        };

        let adj = topo.adjacency();
        let mut adjacency = vec![0.0; nf * nf];
        for i in 0..nf {
            for j in 0..nf {
                adjacency[i * nf + j] = adj[(i, j)];
            }
        }
        Ok(Self {
            regime,
            options: options.clone(),
            n,
            p,
            q,
            nf,
            a: FlatMat::from_dense(&model.a),
            b: FlatMat::from_dense(&model.b),
            c: FlatMat::from_dense(&model.c),
            acl: FlatMat::from_dense(&(&model.a + &model.b * &gains.k2)),
            k1: FlatMat::from_dense(&gains.k1),
            k2: FlatMat::from_dense(&gains.k2),
            inj,
            gamma,
            rho_mat,
            bts,
            btq,
            beta,
            adjacency,
            pinning: topo.pinning().to_vec(),
            neighbors: (0..nf).map(|i| topo.in_neighbors(i).collect()).collect(),
            k_edge,
            k_pin,
            leak,
            leader_input: leader_input.clone(),
            spec: spec.clone(),
        })
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn options(&self) -> &RegimeOptions {
        &self.options
    }

    pub fn spec(&self) -> &FormationSpec {
        &self.spec
    }

    pub fn leader_input(&self) -> &LeaderInput {
        &self.leader_input
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.nf, self.n, self.p, self.q)
    }

    pub fn control_layout(&self) -> ControlLayout {
        ControlLayout { nf: self.nf, n: self.n }
    }

    pub fn state_layout(&self) -> StateLayout {
        StateLayout::new(self.nf, self.n)
    }

    pub fn workspace(&self) -> Workspace {
        let len = self.nf * self.n;
        Workspace {
            h: vec![0.0; len],
            hdot: vec![0.0; len],
            y: vec![0.0; (self.nf + 1) * self.q],
            u: vec![0.0; self.nf * self.p],
            u0: vec![0.0; self.p],
            dctrl: vec![0.0; self.control_layout().len()],
        }
    }

    /// Leader input, plant matrices and outputs used by integrators.
    pub(crate) fn leader_derivative(&self, x0: &[f64], u0: &[f64], out: &mut [f64]) {
        self.a.mul(x0, out);
        self.b.mul_acc(1.0, u0, out);
    }

    pub(crate) fn plant_derivative(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        self.a.mul(x, out);
        self.b.mul_acc(1.0, u, out);
    }

    /// Computes follower inputs `ws.u`, leader input `ws.u0` and the
    /// controller derivative `ws.dctrl` from agent states `x` and
    /// controller state `ctrl`, with formation piece `piece` frozen.
    pub fn evaluate<L: AccessLog>(
        &self,
        t: f64,
        piece: usize,
        x: &[f64],
        ctrl: &[f64],
        ws: &mut Workspace,
        log: &L,
    ) {
        let (n, q, nf) = (self.n, self.q, self.nf);
        let lay = self.control_layout();
        self.spec.eval_piece(piece, t, &mut ws.h, &mut ws.hdot);
        for j in 0..=nf {
            self.c.mul(&x[j * n..(j + 1) * n], &mut ws.y[j * q..(j + 1) * q]);
        }
        self.leader_input.eval_into(t, &mut ws.u0);
        ws.dctrl.fill(0.0);

        let snap = Snapshot {
            n,
            q,
            x,
            y: &ws.y,
            v: &ctrl[lay.v()],
            w: &ctrl[lay.w()],
            w0: &ctrl[lay.w0()],
            h: &ws.h,
        };
        let c_edge = &ctrl[lay.c_edge()];
        let c_node = &ctrl[lay.c_node()];
        for fi in 0..nf {
            let view = NodeView {
                me: fi + 1,
                snap: &snap,
                log,
            };
            let row = fi * nf..(fi + 1) * nf;
            let out = self.follower(fi, &view, c_edge, c_node[fi], &mut ws.dctrl[lay.c_edge()][row]);
            ws.u[fi * self.p..(fi + 1) * self.p].copy_from_slice(&out.u[..self.p]);
            ws.dctrl[lay.v()][fi * n..(fi + 1) * n].copy_from_slice(&out.dv[..n]);
            ws.dctrl[lay.w()][fi * n..(fi + 1) * n].copy_from_slice(&out.dw[..n]);
            ws.dctrl[lay.c_node()][fi] = out.dc;
        }

        if self.regime.uses_local_observers() {
            let w0 = &ctrl[lay.w0()];
            let y0 = &ws.y[..q];
            let mut dw0: Vec16 = [0.0; MAX_DIM];
            self.a.mul(w0, &mut dw0[..n]);
            if self.regime.uses_state_gains() {
                let mut e: Vec16 = [0.0; MAX_DIM];
                for k in 0..n {
                    e[k] = w0[k] - x[k];
                }
                self.inj.mul_acc(1.0, &e[..n], &mut dw0[..n]);
            } else {
                let mut e: Vec16 = [0.0; MAX_DIM];
                self.c.mul(w0, &mut e[..q]);
                for k in 0..q {
                    e[k] -= y0[k];
                }
                self.inj.mul_acc(1.0, &e[..q], &mut dw0[..n]);
                if self.regime == Regime::DirectedTrackingBoundedInput {
                    self.b.mul_acc(1.0, &ws.u0, &mut dw0[..n]);
                }
            }
            ws.dctrl[lay.w0()].copy_from_slice(&dw0[..n]);
        }
    }

    /// Full linear closed loop: `state = [x; ctrl]`.
    pub fn rhs(&self, t: f64, piece: usize, state: &[f64], dstate: &mut [f64], ws: &mut Workspace) {
        self.rhs_logged(t, piece, state, dstate, ws, &NoLog);
    }

    pub fn rhs_logged<L: AccessLog>(
        &self,
        t: f64,
        piece: usize,
        state: &[f64],
        dstate: &mut [f64],
        ws: &mut Workspace,
        log: &L,
    ) {
        let lay = self.state_layout();
        let (n, p) = (self.n, self.p);
        let (x, ctrl) = state.split_at(lay.x().end);
        self.evaluate(t, piece, x, ctrl, ws, log);
        let (dx, dctrl) = dstate.split_at_mut(lay.x().end);
        self.leader_derivative(&x[..n], &ws.u0, &mut dx[..n]);
        for fi in 0..self.nf {
            let r = lay.agent(fi + 1);
            self.plant_derivative(&x[r.clone()], &ws.u[fi * p..(fi + 1) * p], &mut dx[r]);
        }
        dctrl.copy_from_slice(&ws.dctrl);
    }

    #[inline]
    fn adj(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.nf + j]
    }

    fn follower<L: AccessLog>(
        &self,
        fi: usize,
        view: &NodeView<'_, L>,
        c_edge: &[f64],
        c_i: f64,
        dc_edge: &mut [f64],
    ) -> NodeOutput {
        let (n, q, nf) = (self.n, self.q, self.nf);
        let me = fi + 1;
        let mut out = NodeOutput::default();
        let v_i = view.v(me);
        let h_i = view.h(me);

        // u_i = K₁h_i + K₂v_i
        self.k1.mul(h_i, &mut out.u[..self.p]);
        self.k2.mul_acc(1.0, v_i, &mut out.u[..self.p]);

        match self.regime {
            Regime::UndirectedTracking | Regime::UndirectedStabilization => {
                let cbar_i = self.cbar(v_i, h_i);
                let mut innov: Vec16 = [0.0; MAX_DIM];
                let mut e: Vec16 = [0.0; MAX_DIM];
                for &fj in &self.neighbors[fi] {
                    let a_ij = self.adj(fi, fj);
                    let cbar_j = self.cbar(view.v(fj + 1), view.h(fj + 1));
                    let (y_i, y_j) = view.rel_output(fj + 1);
                    for k in 0..q {
                        e[k] = (cbar_i[k] - cbar_j[k]) - (y_i[k] - y_j[k]);
                    }
                    axpy(a_ij * c_edge[fi * nf + fj], &e[..q], &mut innov[..q]);
                    dc_edge[fj] = self.k_edge[fi * nf + fj] * a_ij * self.gamma.quad(&e[..q]);
                }
                let d_i = self.pinning[fi];
                if self.regime == Regime::UndirectedTracking && d_i > 0.0 {
                    let (y_i, y_0) = view.rel_output(0);
                    for k in 0..q {
                        e[k] = cbar_i[k] - (y_i[k] - y_0[k]);
                    }
                    axpy(d_i * c_i, &e[..q], &mut innov[..q]);
                    out.dc = self.k_pin[fi] * d_i * self.gamma.quad(&e[..q]);
                }
                self.acl.mul(v_i, &mut out.dv[..n]);
                self.inj.mul_acc(1.0, &innov[..q], &mut out.dv[..n]);
            }
            Regime::DirectedTrackingFullAccess => {
                let cbar_i = self.cbar(v_i, h_i);
                let mut sum: Vec16 = [0.0; MAX_DIM];
                for &fj in &self.neighbors[fi] {
                    let a_ij = self.adj(fi, fj);
                    let cbar_j = self.cbar(view.v(fj + 1), view.h(fj + 1));
                    let (y_i, y_j) = view.rel_output(fj + 1);
                    for k in 0..q {
                        sum[k] += a_ij * ((cbar_i[k] - cbar_j[k]) - (y_i[k] - y_j[k]));
                    }
                }
                let d_i = self.pinning[fi];
                let (y_i, y_0) = view.rel_output(0);
                let mut e0: Vec16 = [0.0; MAX_DIM];
                for k in 0..q {
                    e0[k] = cbar_i[k] - (y_i[k] - y_0[k]);
                    sum[k] += d_i * e0[k];
                }
                // ρ_i = e_iᵀQe_i, e_i = x_i − h_i − x₀ − v_i
                let x_i = view.omniscient_state(me);
                let x_0 = view.omniscient_state(0);
                let mut err: Vec16 = [0.0; MAX_DIM];
                for k in 0..n {
                    err[k] = x_i[k] - h_i[k] - x_0[k] - v_i[k];
                }
                let rho = self.rho_mat.quad(&err[..n]);
                self.acl.mul(v_i, &mut out.dv[..n]);
                self.inj.mul_acc(c_i + rho, &sum[..q], &mut out.dv[..n]);
                out.dc = self.gamma.quad(&e0[..q]);
                out.rho = rho;
            }
            Regime::DirectedStabilization => {
                let cbar_i = self.cbar(v_i, h_i);
                let mut c_varrho: Vec16 = [0.0; MAX_DIM];
                let mut varrho: Vec16 = [0.0; MAX_DIM];
                let x_i = view.omniscient_state(me);
                for &fj in &self.neighbors[fi] {
                    let a_ij = self.adj(fi, fj);
                    let v_j = view.v(fj + 1);
                    let h_j = view.h(fj + 1);
                    let cbar_j = self.cbar(v_j, h_j);
                    let (y_i, y_j) = view.rel_output(fj + 1);
                    for k in 0..q {
                        c_varrho[k] += a_ij * ((cbar_i[k] - cbar_j[k]) - (y_i[k] - y_j[k]));
                    }
                    let x_j = view.omniscient_state(fj + 1);
                    for k in 0..n {
                        varrho[k] += a_ij * ((v_i[k] - v_j[k]) - ((x_i[k] - h_i[k]) - (x_j[k] - h_j[k])));
                    }
                }
                let rho = self.rho_mat.quad(&varrho[..n]);
                self.acl.mul(v_i, &mut out.dv[..n]);
                self.inj.mul_acc(c_i + rho, &c_varrho[..q], &mut out.dv[..n]);
                out.dc = self.gamma.quad(&c_varrho[..q]);
                out.rho = rho;
            }
            Regime::DirectedStabilizationState => {
                let mut varrho: Vec16 = [0.0; MAX_DIM];
                for &fj in &self.neighbors[fi] {
                    let a_ij = self.adj(fi, fj);
                    let v_j = view.v(fj + 1);
                    let h_j = view.h(fj + 1);
                    let (x_i, x_j) = view.rel_state(fj + 1);
                    for k in 0..n {
                        varrho[k] += a_ij * ((v_i[k] + h_i[k] - v_j[k] - h_j[k]) - (x_i[k] - x_j[k]));
                    }
                }
                let rho = self.rho_mat.quad(&varrho[..n]);
                self.acl.mul(v_i, &mut out.dv[..n]);
                self.inj.mul_acc(c_i + rho, &varrho[..n], &mut out.dv[..n]);
                out.dc = self.gamma.quad(&varrho[..n]);
                out.rho = rho;
            }
            Regime::DirectedTrackingObserver
            | Regime::DirectedTrackingBoundedInput
            | Regime::DirectedTrackingObserverState => {
                let w_i = view.w(me);
                let mut psi: Vec16 = [0.0; MAX_DIM];
                let mut eta: Vec16 = [0.0; MAX_DIM];
                for &fj in &self.neighbors[fi] {
                    let a_ij = self.adj(fi, fj);
                    let v_j = view.v(fj + 1);
                    let w_j = view.w(fj + 1);
                    for k in 0..n {
                        psi[k] += a_ij * (v_i[k] - v_j[k]);
                        eta[k] += a_ij * (w_i[k] - w_j[k]);
                    }
                }
                let d_i = self.pinning[fi];
                if d_i > 0.0 {
                    let w0 = view.w0();
                    for k in 0..n {
                        psi[k] += d_i * v_i[k];
                        eta[k] += d_i * (w_i[k] - w0[k]);
                    }
                }
                let mut varrho: Vec16 = [0.0; MAX_DIM];
                for k in 0..n {
                    varrho[k] = psi[k] - eta[k];
                }
                let rho = self.rho_mat.quad(&varrho[..n]);

                // local innovation: C w_i − (y_i − C h_i), or w_i − (x_i − h_i)
                let mut local: Vec16 = [0.0; MAX_DIM];
                let state = self.regime.uses_state_gains();
                let m = if state {
                    let x_i = view.own_state();
                    for k in 0..n {
                        local[k] = w_i[k] - (x_i[k] - h_i[k]);
                    }
                    n
                } else {
                    let y_i = view.own_output();
                    let ch = self.cbar(w_i, h_i);
                    for k in 0..q {
                        // C(w_i + h_i) − y_i
                        local[k] = ch[k] - y_i[k];
                    }
                    q
                };

                let mut gain_in: Vec16 = [0.0; MAX_DIM];
                let mut z: Vec16 = [0.0; MAX_DIM];
                let mut arg: Vec16 = [0.0; MAX_DIM];
                let p = self.p;
                // B(u_i − K₁h_i) = B(K₂v_i − βz(BᵀSη_i))
                self.k2.mul(v_i, &mut gain_in[..p]);
                if let (Some(bts), Some(btq)) = (&self.bts, &self.btq) {
                    bts.mul(&eta[..n], &mut arg[..p]);
                    z_into(&arg[..p], self.options.smooth_z, self.options.delta, &mut z[..p]);
                    for k in 0..p {
                        out.u[k] -= self.beta * z[k];
                        gain_in[k] -= self.beta * z[k];
                    }
                    self.a.mul(w_i, &mut out.dw[..n]);
                    self.b.mul_acc(1.0, &gain_in[..p], &mut out.dw[..n]);
                    btq.mul(&varrho[..n], &mut arg[..p]);
                    z_into(&arg[..p], self.options.smooth_z, self.options.delta, &mut z[..p]);
                    for k in 0..p {
                        gain_in[k] -= self.beta * z[k];
                    }
                } else {
                    self.a.mul(w_i, &mut out.dw[..n]);
                    self.b.mul_acc(1.0, &gain_in[..p], &mut out.dw[..n]);
                }
                self.inj.mul_acc(1.0, &local[..m], &mut out.dw[..n]);

                self.a.mul(v_i, &mut out.dv[..n]);
                self.b.mul_acc(1.0, &gain_in[..p], &mut out.dv[..n]);
                self.inj.mul_acc(1.0, &local[..m], &mut out.dv[..n]);
                if state {
                    self.inj.mul_acc(c_i + rho, &varrho[..n], &mut out.dv[..n]);
                    out.dc = self.gamma.quad(&varrho[..n]);
                } else {
                    let mut cv: Vec16 = [0.0; MAX_DIM];
                    self.c.mul(&varrho[..n], &mut cv[..q]);
                    self.inj.mul_acc(c_i + rho, &cv[..q], &mut out.dv[..n]);
                    out.dc = self.gamma.quad(&cv[..q]);
                }
                if self.regime == Regime::DirectedTrackingBoundedInput {
                    out.dc -= self.leak[fi] * (c_i - 1.0);
                }
                out.rho = rho;
            }
        }
        out
    }

    /// `C(v + h)`.
    #[inline]
    fn cbar(&self, v: &[f64], h: &[f64]) -> Vec16 {
        let mut s: Vec16 = [0.0; MAX_DIM];
        for k in 0..self.n {
            s[k] = v[k] + h[k];
        }
        let mut out: Vec16 = [0.0; MAX_DIM];
        self.c.mul(&s[..self.n], &mut out[..self.q]);
        out
    }

    /// `ρ_i` for every follower, as used by the current regime (zero for
    /// the undirected regimes).
    pub fn rho_values(&self, t: f64, piece: usize, x: &[f64], ctrl: &[f64], ws: &mut Workspace) -> Vec<f64> {
        let (n, q, nf) = (self.n, self.q, self.nf);
        let lay = self.control_layout();
        self.spec.eval_piece(piece, t, &mut ws.h, &mut ws.hdot);
        for j in 0..=nf {
            self.c.mul(&x[j * n..(j + 1) * n], &mut ws.y[j * q..(j + 1) * q]);
        }
        let snap = Snapshot {
            n,
            q,
            x,
            y: &ws.y,
            v: &ctrl[lay.v()],
            w: &ctrl[lay.w()],
            w0: &ctrl[lay.w0()],
            h: &ws.h,
        };
        let mut scratch = vec![0.0; nf];
        (0..nf)
            .map(|fi| {
                let view = NodeView {
                    me: fi + 1,
                    snap: &snap,
                    log: &NoLog,
                };
                self.follower(fi, &view, &ctrl[lay.c_edge()], ctrl[lay.c_node()][fi], &mut scratch)
                    .rho
            })
            .collect()
    }

    pub fn rho_matrix(&self) -> DenseMatrix {
        DenseMatrix::from_row_slice(self.rho_mat.rows, self.rho_mat.cols, &self.rho_mat.data)
    }
}

struct NodeOutput {
    u: Vec16,
    dv: Vec16,
    dw: Vec16,
    dc: f64,
    rho: f64,
}

impl Default for NodeOutput {
    fn default() -> Self {
        Self {
            u: [0.0; MAX_DIM],
            dv: [0.0; MAX_DIM],
            dw: [0.0; MAX_DIM],
            dc: 0.0,
            rho: 0.0,
        }
    }
}
