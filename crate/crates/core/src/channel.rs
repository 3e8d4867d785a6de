//! Link budget, packet error rates and erasure masks.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Mat;
use crate::topology::Topology;

/// Distances below this are clamped before taking the logarithm.
pub const MIN_DISTANCE_M: f64 = 1.0;
pub const BITS_PER_ELEMENT: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    #[default]
    Bpsk,
    Qpsk,
}

/// Unit convention for the carrier frequency in the free-space formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PathLossUnits {
    #[default]
    Mhz,
    Ghz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub fc_mhz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_psd_dbm_hz: f64,
    pub modulation: Modulation,
    pub path_loss_units: PathLossUnits,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            fc_mhz: 2500.0,
            bandwidth_hz: 30e6,
            tx_power_dbm: 20.0,
            noise_psd_dbm_hz: -174.0,
            modulation: Modulation::Bpsk,
            path_loss_units: PathLossUnits::Mhz,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.fc_mhz > 0.0 && self.fc_mhz.is_finite()) {
            return invalid(format!("carrier frequency must be positive, got {}", self.fc_mhz));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return invalid(format!("bandwidth must be positive, got {}", self.bandwidth_hz));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_psd_dbm_hz.is_finite() {
            return invalid("transmit power and noise density must be finite");
        }
        Ok(())
    }

    /// Path loss for this budget's carrier, honoring the unit switch.
    pub fn path_loss_db(&self, distance_m: f64) -> Result<f64> {
        let fc = match self.path_loss_units {
            PathLossUnits::Mhz => self.fc_mhz,
            PathLossUnits::Ghz => self.fc_mhz / 1000.0,
        };
        path_loss_db(distance_m.max(MIN_DISTANCE_M), fc)
    }

    pub fn noise_dbm(&self) -> f64 {
        self.noise_psd_dbm_hz + 10.0 * self.bandwidth_hz.log10()
    }

    /// Bit error rate on a link of the given length.
    pub fn link_ber(&self, distance_m: f64) -> Result<f64> {
        let pl = self.path_loss_db(distance_m)?;
        Ok(ber(snr_linear(self, pl), self.modulation))
    }
}

/// Free-space loss `20·log10(fc) + 20·log10(d_km) + 32.4`.
pub fn path_loss_db(distance_m: f64, fc: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return invalid(format!("distance must be positive, got {distance_m}"));
    }
    if !(fc > 0.0) {
        return invalid(format!("carrier frequency must be positive, got {fc}"));
    }
    Ok(20.0 * fc.log10() + 20.0 * (distance_m / 1000.0).log10() + 32.4)
}

pub fn snr_linear(budget: &LinkBudget, pl_db: f64) -> f64 {
    10f64.powf((budget.tx_power_dbm - pl_db - budget.noise_dbm()) / 10.0)
}

/// `Q(√(2γ)) = erfc(√γ)/2`; Gray-coded QPSK has the same per-bit rate.
pub fn ber(gamma: f64, modulation: Modulation) -> f64 {
    match modulation {
        Modulation::Bpsk | Modulation::Qpsk => 0.5 * libm::erfc(gamma.max(0.0).sqrt()),
    }
}

/// Packet error rate for `elems` float32 elements, in log space.
pub fn per(eps_b: f64, elems: usize) -> f64 {
    let bits = (BITS_PER_ELEMENT * elems) as f64;
    per_bits(eps_b, bits)
}

pub(crate) fn per_bits(eps_b: f64, bits: f64) -> f64 {
    let eps_b = eps_b.clamp(0.0, 1.0);
    if eps_b >= 1.0 {
        return 1.0;
    }
    -(bits * (-eps_b).ln_1p()).exp_m1()
}

/// Segmentation of an `M`-element model into equally sized packets (the last
/// one possibly short).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketPlan {
    pub model_dim: usize,
    pub elems_per_packet: usize,
    pub n_packets: usize,
}

impl PacketPlan {
    pub fn by_packet_len(model_dim: usize, elems_per_packet: usize) -> Result<Self> {
        if model_dim == 0 || elems_per_packet == 0 {
            return invalid("model_dim and elems_per_packet must be positive");
        }
        Ok(Self {
            model_dim,
            elems_per_packet,
            n_packets: model_dim.div_ceil(elems_per_packet),
        })
    }

    /// Split into (at most) `n_packets` packets of `⌈M/n_packets⌉` elements.
    pub fn by_packet_count(model_dim: usize, n_packets: usize) -> Result<Self> {
        if model_dim == 0 || n_packets == 0 {
            return invalid("model_dim and n_packets must be positive");
        }
        if n_packets > model_dim {
            return invalid(format!(
                "{n_packets} packets exceed the {model_dim} model elements"
            ));
        }
        Self::by_packet_len(model_dim, model_dim.div_ceil(n_packets))
    }

    pub fn bits_per_packet(&self) -> usize {
        BITS_PER_ELEMENT * self.elems_per_packet
    }

    /// Element range carried by packet `k`.
    pub fn block(&self, k: usize) -> std::ops::Range<usize> {
        let start = k * self.elems_per_packet;
        start..(start + self.elems_per_packet).min(self.model_dim)
    }
}

/// Success-probability matrix: `1 − ε_P` on edges, 1 on the diagonal, 0 elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    succ: Mat,
    tau_eps: f64,
}

impl ChannelMatrix {
    /// Wrap a caller-provided matrix, checking shape and range. `tau_eps` is
    /// averaged over the topology's edges.
    pub fn from_matrix(succ: Mat, topo: &Topology) -> Result<Self> {
        let n = topo.n_devices();
        if succ.nrows() != n || succ.ncols() != n {
            return invalid(format!(
                "channel matrix is {}x{}, topology has {n} devices",
                succ.nrows(),
                succ.ncols()
            ));
        }
        if succ.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return invalid("success probabilities must lie in [0, 1]");
        }
        if (0..n).any(|i| succ[(i, i)] != 1.0) {
            return invalid("self-link success probability must be exactly 1");
        }
        let tau_eps = mean_edge_per(&succ, topo);
        Ok(Self { succ, tau_eps })
    }

    pub fn perfect(topo: &Topology) -> Self {
        let n = topo.n_devices();
        let mut succ = Mat::identity(n, n);
        for (a, b) in topo.edges() {
            succ[(a, b)] = 1.0;
            succ[(b, a)] = 1.0;
        }
        Self { succ, tau_eps: 0.0 }
    }

    pub fn succ(&self) -> &Mat {
        &self.succ
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.succ[(n, m)]
    }

    pub fn n_devices(&self) -> usize {
        self.succ.nrows()
    }

    /// Mean packet error rate over the edges.
    pub fn tau_eps(&self) -> f64 {
        self.tau_eps
    }

    /// Same links with every PER multiplied by `factor ∈ [0, 1]`.
    pub fn with_scaled_errors(&self, factor: f64, topo: &Topology) -> Result<Self> {
        if !(0.0..=1.0).contains(&factor) {
            return invalid(format!("error scale must be in [0, 1], got {factor}"));
        }
        let mut succ = self.succ.clone();
        for (a, b) in topo.edges() {
            let v = 1.0 - factor * (1.0 - self.succ[(a, b)]);
            succ[(a, b)] = v;
            succ[(b, a)] = v;
        }
        Self::from_matrix(succ, topo)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        crate::report::write_matrix_csv(out, &self.succ)
    }
}

fn mean_edge_per(succ: &Mat, topo: &Topology) -> f64 {
    if topo.n_edges() == 0 {
        return 0.0;
    }
    topo.edges().map(|(a, b)| 1.0 - succ[(a, b)]).sum::<f64>() / topo.n_edges() as f64
}

pub fn build_channel_matrix(
    topo: &Topology,
    budget: &LinkBudget,
    plan: &PacketPlan,
) -> Result<ChannelMatrix> {
    build_channel_matrix_bits(topo, budget, plan.bits_per_packet() as f64)
}

/// Channel matrix for packets of an explicit bit length.
pub fn build_channel_matrix_bits(
    topo: &Topology,
    budget: &LinkBudget,
    bits_per_packet: f64,
) -> Result<ChannelMatrix> {
    budget.validate()?;
    if !(bits_per_packet > 0.0) {
        return invalid("packet length must be positive");
    }
    let n = topo.n_devices();
    let mut succ = Mat::identity(n, n);
    for (a, b) in topo.edges() {
        let eps_b = budget.link_ber(topo.distance(a, b))?;
        let s = 1.0 - per_bits(eps_b, bits_per_packet);
        succ[(a, b)] = s;
        succ[(b, a)] = s;
    }
    ChannelMatrix::from_matrix(succ, topo)
}

/// Per-packet survival pattern for one (receiver, sender, slot) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErasureMask {
    packets: Vec<bool>,
}

impl ErasureMask {
    pub fn all_ones(plan: &PacketPlan) -> Self {
        Self { packets: vec![true; plan.n_packets] }
    }

    pub fn packets(&self) -> &[bool] {
        &self.packets
    }

    pub fn survived(&self) -> usize {
        self.packets.iter().filter(|&&p| p).count()
    }

    /// Expand to a 0/1 vector of length `M`.
    pub fn to_elements(&self, plan: &PacketPlan) -> Vec<f64> {
        let mut out = vec![0.0; plan.model_dim];
        for (k, &ok) in self.packets.iter().enumerate() {
            if ok {
                out[plan.block(k)].fill(1.0);
            }
        }
        out
    }

    /// `acc += weight · (mask ∘ x)`.
    pub fn axpy(&self, plan: &PacketPlan, weight: f64, x: &[f64], acc: &mut [f64]) {
        for (k, &ok) in self.packets.iter().enumerate() {
            if ok {
                let r = plan.block(k);
                for (a, v) in acc[r.clone()].iter_mut().zip(&x[r]) {
                    *a += weight * v;
                }
            }
        }
    }

    /// Elementwise product of two masks (a packet survives both hops).
    pub fn and(&self, other: &Self) -> Self {
        Self {
            packets: self.packets.iter().zip(&other.packets).map(|(a, b)| *a && *b).collect(),
        }
    }
}

pub fn sample_mask<R: Rng + ?Sized>(succ_prob: f64, plan: &PacketPlan, rng: &mut R) -> ErasureMask {
    let p = succ_prob.clamp(0.0, 1.0);
    let packets = (0..plan.n_packets)
        .map(|_| {
            if p >= 1.0 {
                true
            } else if p <= 0.0 {
                false
            } else {
                rng.random::<f64>() < p
            }
        })
        .collect();
    ErasureMask { packets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use proptest::prelude::*;

    fn q_oracle(x: f64) -> f64 {
        // Simpson quadrature of the Gaussian tail.
        let n = 200_000;
        let upper = x + 40.0;
        let h = (upper - x) / n as f64;
        let f = |t: f64| (-t * t / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = f(x) + f(upper);
        for i in 1..n {
            let t = x + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
        }
        s * h / 3.0
    }

    #[test]
    fn path_loss_values() {
        let a = path_loss_db(1000.0, 2500.0).unwrap();
        let expect = 20.0 * 2500f64.log10() + 32.4;
        assert!((a - expect).abs() < 1e-12);
        assert!((a - 100.358).abs() < 1e-3);
        let b = path_loss_db(3000.0, 2500.0).unwrap();
        assert!((b - 109.9012).abs() < 1e-3);
        let c = path_loss_db(100.0, 2500.0).unwrap();
        assert!((a - c - 20.0).abs() < 1e-12);
        assert!(path_loss_db(0.0, 2500.0).is_err());
        assert!(path_loss_db(-5.0, 2500.0).is_err());
    }

    #[test]
    fn ghz_units_shift_by_sixty_db() {
        let mhz = LinkBudget::default();
        let ghz = LinkBudget { path_loss_units: PathLossUnits::Ghz, ..mhz };
        let d = mhz.path_loss_db(1500.0).unwrap() - ghz.path_loss_db(1500.0).unwrap();
        assert!((d - 60.0).abs() < 1e-9);
    }

    #[test]
    fn snr_values() {
        let b = LinkBudget::default();
        let g = snr_linear(&b, 100.36);
        let g_db = 10.0 * g.log10();
        let noise = -174.0 + 10.0 * 30e6f64.log10();
        assert!((g_db - (20.0 - 100.36 - noise)).abs() < 1e-9);
        assert!((g_db - 18.87).abs() < 0.01);
        assert!((g - 77.1).abs() < 0.1);
        assert_eq!(snr_linear(&b, f64::INFINITY), 0.0);
        let wide = LinkBudget { bandwidth_hz: 60e6, ..b };
        assert!((snr_linear(&wide, 100.0) / snr_linear(&b, 100.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ber_values_against_quadrature() {
        assert_eq!(ber(0.0, Modulation::Bpsk), 0.5);
        let b1 = ber(1.0, Modulation::Bpsk);
        assert!((b1 - q_oracle(2f64.sqrt())).abs() < 1e-9);
        assert!((b1 - 0.0786).abs() < 1e-4);
        let b2 = ber(8.57, Modulation::Qpsk);
        assert!((b2 - q_oracle((2.0 * 8.57f64).sqrt())).abs() < 1e-10);
        assert!((b2 - 1.7e-5).abs() < 0.1e-5);
    }

    #[test]
    fn per_values() {
        assert_eq!(per(0.0, 100), 0.0);
        assert_eq!(per(1.0, 100), 1.0);
        let p = per(1.7e-5, 756);
        let oracle = 1.0 - (24192.0 * (1.0f64 - 1.7e-5).ln()).exp();
        assert!((p - oracle).abs() < 1e-12);
        assert!((p - 0.337).abs() < 1e-3);
        // Tiny BER where the direct form cancels badly.
        let tiny = per(1e-18, 10);
        assert!((tiny - 320e-18).abs() < 1e-27);
    }

    #[test]
    fn packet_plans() {
        let p = PacketPlan::by_packet_count(1_210_000, 1600).unwrap();
        assert_eq!(p.elems_per_packet, 757);
        assert_eq!(p.n_packets, 1599);
        assert!(p.n_packets * p.elems_per_packet >= p.model_dim);
        assert_eq!(p.bits_per_packet(), 32 * 757);
        let q = PacketPlan::by_packet_len(64, 8).unwrap();
        assert_eq!(q.n_packets, 8);
        assert_eq!(q.block(7), 56..64);
        let r = PacketPlan::by_packet_len(10, 4).unwrap();
        assert_eq!(r.block(2), 8..10);
        assert!(PacketPlan::by_packet_count(5, 6).is_err());
    }

    #[test]
    fn channel_matrix_at_default_layout() {
        let topo = Topology::from_table(10)
            .unwrap()
            .build_edges_by_density(0.5, &mut stream(0, &[]))
            .unwrap();
        let plan = PacketPlan::by_packet_count(1_210_000, 1600).unwrap();
        let t = build_channel_matrix(&topo, &LinkBudget::default(), &plan).unwrap();
        let s = t.succ();
        assert_eq!(s, &s.transpose());
        for i in 0..10 {
            assert_eq!(s[(i, i)], 1.0);
        }
        assert!(topo.edges().any(|(a, b)| s[(a, b)] > 0.0 && s[(a, b)] < 1.0));
        assert!(t.tau_eps() > 0.0 && t.tau_eps() < 1.0);
    }

    #[test]
    fn channel_matrix_limits() {
        let plan = PacketPlan::by_packet_len(1000, 10).unwrap();
        let coloc = Topology::from_coords(vec![(5.0, 5.0); 4])
            .unwrap()
            .with_edges([(0, 1), (1, 2), (2, 3)])
            .unwrap();
        let t = build_channel_matrix(&coloc, &LinkBudget::default(), &plan).unwrap();
        assert!(coloc.edges().all(|(a, b)| t.get(a, b) == 1.0));
        assert_eq!(t.tau_eps(), 0.0);

        let far = Topology::from_table(4)
            .unwrap()
            .with_edges([(0, 1), (1, 2), (2, 3)])
            .unwrap()
            .scale(1e6)
            .unwrap();
        let t = build_channel_matrix(&far, &LinkBudget::default(), &plan).unwrap();
        assert!(far.edges().all(|(a, b)| t.get(a, b) < 1e-12));
    }

    #[test]
    fn halving_distances_lowers_every_per() {
        let topo = Topology::from_table(10)
            .unwrap()
            .build_edges_by_density(0.5, &mut stream(0, &[]))
            .unwrap();
        let plan = PacketPlan::by_packet_count(1_210_000, 1600).unwrap();
        let b = LinkBudget::default();
        let t1 = build_channel_matrix(&topo, &b, &plan).unwrap();
        let t2 = build_channel_matrix(&topo.scale(0.5).unwrap(), &b, &plan).unwrap();
        for (a, c) in topo.edges() {
            if t1.get(a, c) < 1.0 {
                assert!(t2.get(a, c) > t1.get(a, c));
            }
        }
    }

    #[test]
    fn masks() {
        let plan = PacketPlan::by_packet_len(64, 8).unwrap();
        let mut rng = stream(5, &[]);
        assert_eq!(sample_mask(1.0, &plan, &mut rng).survived(), 8);
        assert_eq!(sample_mask(0.0, &plan, &mut rng).survived(), 0);

        let one = PacketPlan::by_packet_len(1, 1).unwrap();
        let hits: usize = (0..10_000).map(|_| sample_mask(0.7, &one, &mut rng).survived()).sum();
        let frac = hits as f64 / 1e4;
        assert!((frac - 0.7).abs() < 0.02, "{frac}");

        let m = sample_mask(0.5, &plan, &mut rng);
        let e = m.to_elements(&plan);
        for k in 0..plan.n_packets {
            let block = &e[plan.block(k)];
            assert!(block.iter().all(|&v| v == block[0]));
        }
    }

    proptest! {
        #[test]
        fn per_monotone(a in 0.0f64..0.5, b in 0.0f64..0.5, l in 1usize..2000, k in 1usize..2000) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(per(lo, l) <= per(hi, l));
            let (ls, lb) = if l <= k { (l, k) } else { (k, l) };
            prop_assert!(per(a, ls) <= per(a, lb));
            prop_assert!((0.0..=1.0).contains(&per(a, l)));
        }

        #[test]
        fn success_weakly_decreases_with_kappa(k1 in 0.1f64..5.0, k2 in 0.1f64..5.0) {
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let topo = Topology::from_table(8)
                .unwrap()
                .build_edges_by_density(0.6, &mut stream(2, &[]))
                .unwrap();
            let plan = PacketPlan::by_packet_count(1_210_000, 1600).unwrap();
            let b = LinkBudget::default();
            let near = build_channel_matrix(&topo.scale(lo).unwrap(), &b, &plan).unwrap();
            let far = build_channel_matrix(&topo.scale(hi).unwrap(), &b, &plan).unwrap();
            for (a, c) in topo.edges() {
                prop_assert!(far.get(a, c) <= near.get(a, c));
            }
        }
    }
}
