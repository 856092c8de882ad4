//! System model `y = Hx + n`: channels, transmit symbols, noise and hard
//! decisions, plus the seeding contract shared by every experiment.
//!
//! # Randomness contract
//!
//! Every Monte Carlo trial draws from three independent ChaCha8 streams, one
//! per [`Purpose`]. The 64-bit seed of a stream is
//!
//! ```text
//! seed = mix(mix(mix(master_seed) ^ trial_index) ^ purpose_tag)
//! ```
//!
//! where `mix` is the SplitMix64 finalizer and `purpose_tag` is the ASCII
//! encoding of `"chan"`, `"symb"` or `"nois"`. A trial therefore depends only
//! on `(master_seed, trial_index, purpose)`, never on execution order.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{C64, CMatrix, CVector, Error, Result};

/// Random stream type used by every generator in this module.
pub type Stream = ChaCha8Rng;

/// Role of a per-trial random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Channel,
    Symbols,
    Noise,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Channel => u64::from_be_bytes(*b"\0\0\0\0chan"),
            Purpose::Symbols => u64::from_be_bytes(*b"\0\0\0\0symb"),
            Purpose::Noise => u64::from_be_bytes(*b"\0\0\0\0nois"),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the substream for `(master_seed, trial, purpose)`.
pub fn substream_seed(master_seed: u64, trial: u64, purpose: Purpose) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ trial) ^ purpose.tag())
}

/// Deterministic substream for one trial and one source of randomness.
pub fn substream(master_seed: u64, trial: u64, purpose: Purpose) -> Stream {
    Stream::seed_from_u64(substream_seed(master_seed, trial, purpose))
}

/// Transmit constellation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Constellation {
    Qpsk,
    Bpsk,
    Gaussian,
}

impl Constellation {
    /// Constellation points scaled to average energy `es`, sorted
    /// lexicographically (real part first, then imaginary part).
    ///
    /// Returns `None` for the Gaussian prior.
    pub fn points(self, es: f64) -> Option<Vec<C64>> {
        match self {
            Constellation::Qpsk => {
                let a = (es / 2.0).sqrt();
                Some(vec![
                    C64::new(-a, -a),
                    C64::new(-a, a),
                    C64::new(a, -a),
                    C64::new(a, a),
                ])
            }
            Constellation::Bpsk => {
                let a = es.sqrt();
                Some(vec![C64::new(-a, 0.0), C64::new(a, 0.0)])
            }
            Constellation::Gaussian => None,
        }
    }

    pub fn is_finite(self) -> bool {
        !matches!(self, Constellation::Gaussian)
    }
}

impl FromStr for Constellation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qpsk" => Ok(Constellation::Qpsk),
            "bpsk" => Ok(Constellation::Bpsk),
            "gaussian" => Ok(Constellation::Gaussian),
            other => Err(Error::invalid(format!("unknown constellation `{other}`"))),
        }
    }
}

impl fmt::Display for Constellation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constellation::Qpsk => "qpsk",
            Constellation::Bpsk => "bpsk",
            Constellation::Gaussian => "gaussian",
        })
    }
}

/// Dimensions, powers and run controls of one simulated system.
///
/// The antenna ratio is never stored; [`SystemConfig::beta`] derives it.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    bs_antennas: usize,
    users: usize,
    signal_power: f64,
    noise_power: f64,
    mismatched_power: Option<f64>,
    pub constellation: Constellation,
    pub max_iterations: usize,
    pub master_seed: u64,
}

impl SystemConfig {
    pub fn new(
        bs_antennas: usize,
        users: usize,
        signal_power: f64,
        noise_power: f64,
        constellation: Constellation,
    ) -> Result<Self> {
        if bs_antennas == 0 || users == 0 {
            return Err(Error::invalid("B and U must be at least 1"));
        }
        if !(signal_power > 0.0 && signal_power.is_finite()) {
            return Err(Error::invalid(format!(
                "signal power must be positive, got {signal_power}"
            )));
        }
        if !(noise_power >= 0.0 && noise_power.is_finite()) {
            return Err(Error::invalid(format!(
                "noise power must be nonnegative, got {noise_power}"
            )));
        }
        Ok(SystemConfig {
            bs_antennas,
            users,
            signal_power,
            noise_power,
            mismatched_power: None,
            constellation,
            max_iterations: 20,
            master_seed: 0,
        })
    }

    pub fn with_mismatched_power(mut self, es_mismatched: f64) -> Result<Self> {
        if !(es_mismatched > 0.0 && es_mismatched.is_finite()) {
            return Err(Error::invalid(format!(
                "mismatched signal power must be positive, got {es_mismatched}"
            )));
        }
        self.mismatched_power = Some(es_mismatched);
        Ok(self)
    }

    pub fn with_iterations(mut self, t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("iteration count must be at least 1"));
        }
        self.max_iterations = t;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn bs_antennas(&self) -> usize {
        self.bs_antennas
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// Antenna ratio `U / B`.
    pub fn beta(&self) -> f64 {
        self.users as f64 / self.bs_antennas as f64
    }

    pub fn signal_power(&self) -> f64 {
        self.signal_power
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_power
    }

    pub fn mismatched_power(&self) -> Option<f64> {
        self.mismatched_power
    }
}

/// One channel draw, optionally with per-user gains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// `B × U` channel matrix.
    pub h: CMatrix,
    /// Per-user amplitude gains used to generate `h`, when known.
    pub true_gains: Option<Vec<f64>>,
    /// Column-norm gain estimates, see [`estimate_gains`].
    pub estimated_gains: Option<Vec<f64>>,
}

impl ChannelRealization {
    pub fn bs_antennas(&self) -> usize {
        self.h.nrows()
    }

    pub fn users(&self) -> usize {
        self.h.ncols()
    }

    /// Populates `estimated_gains` from the columns of `h`.
    pub fn with_estimated_gains(mut self) -> Self {
        self.estimated_gains = Some(estimate_gains(&self.h));
        self
    }
}

/// Output of [`transmit`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitFrame {
    pub x: CVector,
    pub y: CVector,
    /// Noise realization, kept for test oracles.
    pub n: CVector,
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// `B × U` channel with i.i.d. `CN(0, 1/B)` entries, drawn column by column.
pub fn gen_uniform_channel<R: Rng + ?Sized>(
    b: usize,
    u: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if b == 0 || u == 0 {
        return Err(Error::invalid(format!("channel shape {b}x{u} is empty")));
    }
    let var = 1.0 / b as f64;
    let h = CMatrix::from_iterator(b, u, (0..b * u).map(|_| complex_gaussian(rng, var)));
    Ok(ChannelRealization {
        h,
        true_gains: None,
        estimated_gains: None,
    })
}

/// Channel `H = H̃·diag(gains)` with `H̃` drawn as in [`gen_uniform_channel`].
pub fn gen_faded_channel<R: Rng + ?Sized>(
    b: usize,
    u: usize,
    gains: &[f64],
    rng: &mut R,
) -> Result<ChannelRealization> {
    if gains.len() != u {
        return Err(Error::invalid(format!(
            "expected {u} user gains, got {}",
            gains.len()
        )));
    }
    if let Some(g) = gains.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::invalid(format!("user gains must be positive, got {g}")));
    }
    let mut ch = gen_uniform_channel(b, u, rng)?;
    for (mut col, &g) in ch.h.column_iter_mut().zip(gains) {
        col *= C64::new(g, 0.0);
    }
    ch.true_gains = Some(gains.to_vec());
    Ok(ch.with_estimated_gains())
}

/// Column-norm gain estimates `d̂_ℓ = sqrt(Σ_j |H_{j,ℓ}|²)`.
///
/// An all-zero column yields a zero gain; callers that cannot handle that
/// (robust NOPE) reject it.
pub fn estimate_gains(h: &CMatrix) -> Vec<f64> {
    h.column_iter().map(|c| c.norm_squared().sqrt()).collect()
}

/// [`estimate_gains`] that rejects channels with an all-zero column.
pub fn estimate_gains_checked(h: &CMatrix) -> Result<Vec<f64>> {
    let d = estimate_gains(h);
    match d.iter().position(|g| !(*g > 0.0)) {
        Some(i) => Err(Error::invalid(format!("user {i} has a zero channel column"))),
        None => Ok(d),
    }
}

/// Draws `u` i.i.d. symbols with `E|x|² = es`.
pub fn draw_symbols<R: Rng + ?Sized>(
    constellation: Constellation,
    u: usize,
    es: f64,
    rng: &mut R,
) -> Result<CVector> {
    if u == 0 {
        return Err(Error::invalid("symbol vector must be nonempty"));
    }
    if !(es > 0.0 && es.is_finite()) {
        return Err(Error::invalid(format!("signal power must be positive, got {es}")));
    }
    let x = match constellation {
        Constellation::Qpsk => {
            let a = (es / 2.0).sqrt();
            let pick = |bit: bool| if bit { a } else { -a };
            CVector::from_iterator(
                u,
                (0..u).map(|_| {
                    let re = pick(rng.random());
                    let im = pick(rng.random());
                    C64::new(re, im)
                }),
            )
        }
        Constellation::Bpsk => {
            let a = es.sqrt();
            CVector::from_iterator(
                u,
                (0..u).map(|_| C64::new(if rng.random() { a } else { -a }, 0.0)),
            )
        }
        Constellation::Gaussian => {
            CVector::from_iterator(u, (0..u).map(|_| complex_gaussian(rng, es)))
        }
    };
    Ok(x)
}

/// Passes `x` through `h` and adds `CN(0, n0)` noise: `y = Hx + n`.
pub fn transmit<R: Rng + ?Sized>(
    h: &CMatrix,
    x: &CVector,
    n0: f64,
    rng: &mut R,
) -> Result<TransmitFrame> {
    if h.ncols() != x.len() {
        return Err(Error::invalid(format!(
            "channel has {} columns but x has {} entries",
            h.ncols(),
            x.len()
        )));
    }
    if !(n0 >= 0.0 && n0.is_finite()) {
        return Err(Error::invalid(format!("noise power must be nonnegative, got {n0}")));
    }
    let b = h.nrows();
    let n = CVector::from_iterator(b, (0..b).map(|_| complex_gaussian(rng, n0)));
    let y = h * x + &n;
    Ok(TransmitFrame { x: x.clone(), y, n })
}

/// Nearest-point hard decisions.
///
/// Ties go to the lexicographically smallest point (real part first, then
/// imaginary part).
pub fn demap(xhat: &CVector, constellation: Constellation, es: f64) -> Result<CVector> {
    let points = constellation.points(es).ok_or_else(|| {
        Error::Unsupported("hard decisions are undefined for the Gaussian prior".into())
    })?;
    Ok(xhat.map(|v| nearest(&points, v)))
}

fn nearest(points: &[C64], v: C64) -> C64 {
    let mut best = points[0];
    let mut best_d = (v - best).norm_sqr();
    for &p in &points[1..] {
        let d = (v - p).norm_sqr();
        if d < best_d {
            best = p;
            best_d = d;
        }
    }
    best
}

/// Number of entries whose hard decision differs from the transmitted symbol.
pub fn symbol_errors(
    xhat: &CVector,
    x: &CVector,
    constellation: Constellation,
    es: f64,
) -> Result<usize> {
    let decided = demap(xhat, constellation, es)?;
    let truth = demap(x, constellation, es)?;
    Ok(decided.iter().zip(truth.iter()).filter(|(a, b)| a != b).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> Stream {
        Stream::seed_from_u64(seed)
    }

    #[test]
    fn uniform_channel_is_deterministic() {
        let a = gen_uniform_channel(4, 2, &mut rng(7)).unwrap();
        let b = gen_uniform_channel(4, 2, &mut rng(7)).unwrap();
        assert_eq!(a.h.shape(), (4, 2));
        assert_eq!(a, b);
        assert!(a.true_gains.is_none() && a.estimated_gains.is_none());
    }

    #[test]
    fn uniform_channel_entry_variance() {
        let (b, u) = (128, 96);
        let mut r = rng(1);
        let draws = 200;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        let mut count = 0.0;
        for _ in 0..draws {
            let ch = gen_uniform_channel(b, u, &mut r).unwrap();
            for v in ch.h.iter() {
                let p = v.norm_sqr();
                acc += p;
                acc2 += p * p;
                count += 1.0;
            }
        }
        let mean = acc / count;
        let sd = ((acc2 / count - mean * mean) / count).sqrt();
        let target = 1.0 / b as f64;
        assert!(mean > 0.95 * target && mean < 1.05 * target);
        assert!((mean - target).abs() < 3.0 * sd, "{mean} vs {target} (sd {sd})");
    }

    #[test]
    fn scalar_channel_has_unit_power() {
        let mut r = rng(3);
        let n = 20_000;
        let mean = (0..n)
            .map(|_| gen_uniform_channel(1, 1, &mut r).unwrap().h[(0, 0)].norm_sqr())
            .sum::<f64>()
            / n as f64;
        // |h|² ~ Exp(1): standard error 1/sqrt(n)
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt() * 1.5);
    }

    #[test]
    fn empty_channel_is_rejected() {
        assert!(gen_uniform_channel(0, 3, &mut rng(0)).is_err());
        assert!(gen_uniform_channel(3, 0, &mut rng(0)).is_err());
    }

    #[test]
    fn unit_gains_match_uniform_channel() {
        let a = gen_uniform_channel(8, 3, &mut rng(5)).unwrap();
        let b = gen_faded_channel(8, 3, &[1.0; 3], &mut rng(5)).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(b.true_gains.as_deref(), Some(&[1.0; 3][..]));
    }

    #[test]
    fn faded_channel_column_power() {
        let mut r = rng(11);
        let (mut c0, mut c1) = (0.0, 0.0);
        let draws = 100;
        for _ in 0..draws {
            let ch = gen_faded_channel(512, 2, &[2.0, 1.0], &mut r).unwrap();
            let d = ch.estimated_gains.unwrap();
            c0 += d[0] * d[0];
            c1 += d[1] * d[1];
        }
        // E d̂² = d², relative sd of one draw is 1/sqrt(B)
        assert_relative_eq!(c0 / draws as f64, 4.0, max_relative = 0.02);
        assert_relative_eq!(c1 / draws as f64, 1.0, max_relative = 0.02);
    }

    #[test]
    fn faded_channel_rejects_bad_gains() {
        assert!(gen_faded_channel(4, 2, &[1.0, 0.0], &mut rng(0)).is_err());
        assert!(gen_faded_channel(4, 2, &[1.0, -1.0], &mut rng(0)).is_err());
        assert!(gen_faded_channel(4, 2, &[1.0], &mut rng(0)).is_err());
    }

    #[test]
    fn gain_estimates() {
        let eye = CMatrix::identity(3, 3);
        assert_eq!(estimate_gains(&eye), vec![1.0; 3]);
        let col = CMatrix::from_column_slice(2, 1, &[C64::new(3.0, 0.0), C64::new(0.0, 4.0)]);
        assert_eq!(estimate_gains(&col), vec![5.0]);
        let zero = CMatrix::zeros(3, 2);
        assert_eq!(estimate_gains(&zero), vec![0.0, 0.0]);
    }

    #[test]
    fn faded_gain_estimates_concentrate() {
        let mut ok = 0;
        let seeds = 200;
        for s in 0..seeds {
            let ch = gen_faded_channel(256, 2, &[2.0, 1.0], &mut rng(1000 + s)).unwrap();
            let d = ch.estimated_gains.unwrap();
            if (d[0] / 2.0 - 1.0).abs() < 0.1 && (d[1] - 1.0).abs() < 0.1 {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.99 * seeds as f64, "{ok}/{seeds}");
    }

    #[test]
    fn qpsk_scaling() {
        let x = draw_symbols(Constellation::Qpsk, 1, 2.0, &mut rng(0)).unwrap();
        assert_eq!(x[0].re.abs(), 1.0);
        assert_eq!(x[0].im.abs(), 1.0);
    }

    #[test]
    fn bpsk_is_zero_mean() {
        let n = 100_000;
        let x = draw_symbols(Constellation::Bpsk, n, 1.0, &mut rng(9)).unwrap();
        let mean = x.iter().map(|v| v.re).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!(x.iter().all(|v| v.im == 0.0 && v.re.abs() == 1.0));
    }

    #[test]
    fn gaussian_symbol_energy() {
        let n = 100_000;
        let x = draw_symbols(Constellation::Gaussian, n, 3.0, &mut rng(4)).unwrap();
        let e = x.norm_squared() / n as f64;
        assert_relative_eq!(e, 3.0, max_relative = 0.05);
    }

    #[test]
    fn constellation_tables_have_exact_energy() {
        for c in [Constellation::Qpsk, Constellation::Bpsk] {
            for es in [0.5, 1.0, 2.0, 7.0] {
                let pts = c.points(es).unwrap();
                let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / pts.len() as f64;
                assert_relative_eq!(e, es, max_relative = 1e-15);
            }
        }
        assert!(Constellation::Gaussian.points(1.0).is_none());
        assert!("8psk".parse::<Constellation>().is_err());
        assert_eq!("QPSK".parse::<Constellation>().unwrap(), Constellation::Qpsk);
    }

    #[test]
    fn noiseless_transmit() {
        let mut r = rng(2);
        let ch = gen_uniform_channel(6, 3, &mut r).unwrap();
        let x = draw_symbols(Constellation::Qpsk, 3, 1.0, &mut r).unwrap();
        let f = transmit(&ch.h, &x, 0.0, &mut r).unwrap();
        assert_eq!(f.y, &ch.h * &x);
        assert!(f.n.iter().all(|v| v.norm_sqr() == 0.0));
    }

    #[test]
    fn transmit_through_zero_channel_gives_noise() {
        let mut r = rng(8);
        let h = CMatrix::zeros(64, 4);
        let x = draw_symbols(Constellation::Qpsk, 4, 1.0, &mut r).unwrap();
        let frames = 2000;
        let mut acc = 0.0;
        for _ in 0..frames {
            let f = transmit(&h, &x, 0.3, &mut r).unwrap();
            assert_eq!(f.y, f.n);
            acc += f.y.norm_squared() / 64.0;
        }
        assert_relative_eq!(acc / frames as f64, 0.3, max_relative = 0.01);
    }

    #[test]
    fn noise_power_concentrates() {
        let mut r = rng(12);
        let ch = gen_uniform_channel(128, 96, &mut r).unwrap();
        let x = draw_symbols(Constellation::Qpsk, 96, 1.0, &mut r).unwrap();
        let frames = 1000;
        let mut acc = 0.0;
        for _ in 0..frames {
            let f = transmit(&ch.h, &x, 0.1, &mut r).unwrap();
            assert_eq!(f.y, &ch.h * &x + &f.n);
            acc += f.n.norm_squared() / 128.0;
        }
        let mean = acc / frames as f64;
        assert!((0.095..=0.105).contains(&mean), "{mean}");
    }

    #[test]
    fn transmit_dimension_mismatch() {
        let h = CMatrix::zeros(4, 3);
        let x = CVector::zeros(2);
        assert!(matches!(
            transmit(&h, &x, 0.1, &mut rng(0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn demap_nearest_point_and_ties() {
        let es = 2.0;
        let v = CVector::from_vec(vec![
            C64::new(1.0, -1.0),
            C64::new(0.9, 1.1),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.5),
        ]);
        let d = demap(&v, Constellation::Qpsk, es).unwrap();
        assert_eq!(d[0], C64::new(1.0, -1.0));
        assert_eq!(d[1], C64::new(1.0, 1.0));
        assert_eq!(d[2], C64::new(-1.0, -1.0));
        assert_eq!(d[3], C64::new(-1.0, 1.0));

        let b = demap(&CVector::from_vec(vec![C64::new(0.0, 3.0)]), Constellation::Bpsk, 1.0)
            .unwrap();
        assert_eq!(b[0], C64::new(-1.0, 0.0));

        assert!(matches!(
            demap(&v, Constellation::Gaussian, 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn substreams_are_distinct_and_stable() {
        let a = substream_seed(42, 0, Purpose::Channel);
        assert_eq!(a, substream_seed(42, 0, Purpose::Channel));
        assert_ne!(a, substream_seed(42, 0, Purpose::Symbols));
        assert_ne!(a, substream_seed(42, 0, Purpose::Noise));
        assert_ne!(a, substream_seed(42, 1, Purpose::Channel));
        assert_ne!(a, substream_seed(43, 0, Purpose::Channel));
    }

    #[test]
    fn system_config_validation() {
        let c = SystemConfig::new(128, 96, 1.0, 0.1, Constellation::Qpsk).unwrap();
        assert_eq!(c.beta(), 0.75);
        assert_eq!(c.max_iterations, 20);
        assert!(SystemConfig::new(0, 1, 1.0, 0.1, Constellation::Qpsk).is_err());
        assert!(SystemConfig::new(1, 1, 0.0, 0.1, Constellation::Qpsk).is_err());
        assert!(SystemConfig::new(1, 1, 1.0, -0.1, Constellation::Qpsk).is_err());
        assert!(c.clone().with_mismatched_power(0.0).is_err());
        assert_eq!(c.with_mismatched_power(4.0).unwrap().mismatched_power(), Some(4.0));
    }
}
