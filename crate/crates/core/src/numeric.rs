//! Compensated accumulation and deterministic chunked reductions.
//!
//! Spectral sums run over up to millions of modes whose magnitudes span many
//! decades. Every sum goes through [`NeumaierSum`], and long sums are split
//! into fixed-size chunks so a parallel reduction merges partial results in
//! the same order regardless of how many worker threads exist.

use rayon::prelude::*;

/// Chunk length for parallel spectral reductions. Fixed so that results do
/// not depend on the thread count.
pub const REDUCTION_CHUNK: usize = 1 << 16;

/// Neumaier's improved Kahan–Babuška summation.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub const fn new() -> Self {
        NeumaierSum { sum: 0.0, comp: 0.0 }
    }

    #[inline(always)]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: NeumaierSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<NeumaierSum>().value()
}

/// Interleaved accumulator lanes per sum inside one chunk. Index `i` always
/// lands in lane `i % LANES`, so the result is independent of scheduling.
const LANES: usize = 8;

#[inline(always)]
fn neumaier_step(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    // Branch-free form of the Neumaier update so the lane loop vectorizes.
    let big = if sum.abs() >= x.abs() { *sum } else { x };
    let small = if sum.abs() >= x.abs() { x } else { *sum };
    *comp += (big - t) + small;
    *sum = t;
}

#[inline(always)]
fn chunk_sums_generic<const L: usize, F>(a: &[f64], b: &[f64], term: &F) -> [NeumaierSum; L]
where
    F: Fn(f64, f64) -> [f64; L],
{
    let mut sum = [[0.0f64; LANES]; L];
    let mut comp = [[0.0f64; LANES]; L];
    let mut ia = a.chunks_exact(LANES);
    let mut ib = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ia).zip(&mut ib) {
        for j in 0..LANES {
            let t = term(xa[j], xb[j]);
            for l in 0..L {
                neumaier_step(&mut sum[l][j], &mut comp[l][j], t[l]);
            }
        }
    }
    for (j, (&x, &y)) in ia.remainder().iter().zip(ib.remainder()).enumerate() {
        let t = term(x, y);
        for l in 0..L {
            neumaier_step(&mut sum[l][j], &mut comp[l][j], t[l]);
        }
    }
    std::array::from_fn(|l| {
        let mut acc = NeumaierSum::new();
        for j in 0..LANES {
            acc.add(sum[l][j]);
            acc.add(comp[l][j]);
        }
        acc
    })
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,avx512f")]
unsafe fn chunk_sums_avx512<const L: usize, F>(a: &[f64], b: &[f64], term: &F) -> [NeumaierSum; L]
where
    F: Fn(f64, f64) -> [f64; L],
{
    chunk_sums_generic(a, b, term)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn chunk_sums_avx2<const L: usize, F>(a: &[f64], b: &[f64], term: &F) -> [NeumaierSum; L]
where
    F: Fn(f64, f64) -> [f64; L],
{
    chunk_sums_generic(a, b, term)
}

/// Wider vector units change speed only: no FMA contraction happens, so every
/// path produces identical bits.
fn chunk_sums<const L: usize, F>(a: &[f64], b: &[f64], term: &F) -> [NeumaierSum; L]
where
    F: Fn(f64, f64) -> [f64; L],
{
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { chunk_sums_avx512(a, b, term) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { chunk_sums_avx2(a, b, term) };
        }
    }
    chunk_sums_generic(a, b, term)
}

/// Evaluates `L` compensated sums over paired slices in one pass.
///
/// `term(a[i], b[i])` returns the `L` summands contributed by index `i`.
/// The slices are processed in chunks of [`REDUCTION_CHUNK`]; chunk partials
/// are merged sequentially in index order.
pub fn paired_sums<const L: usize, F>(a: &[f64], b: &[f64], term: F) -> [f64; L]
where
    F: Fn(f64, f64) -> [f64; L] + Sync,
{
    assert_eq!(a.len(), b.len());
    let partials: Vec<[NeumaierSum; L]> = if a.len() <= REDUCTION_CHUNK {
        vec![chunk_sums(a, b, &term)]
    } else {
        a.par_chunks(REDUCTION_CHUNK)
            .zip(b.par_chunks(REDUCTION_CHUNK))
            .map(|(xa, xb)| chunk_sums(xa, xb, &term))
            .collect()
    };
    let mut total = [NeumaierSum::new(); L];
    for part in partials {
        for (s, p) in total.iter_mut().zip(part) {
            s.merge(p);
        }
    }
    total.map(|s| s.value())
}

/// Formats a float with 17 significant digits (round-trip exact).
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "NaN".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(&xs), 2.0);
        let naive: f64 = xs.iter().sum();
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn chunked_sum_is_independent_of_pool_size() {
        let a: Vec<f64> = (1..=300_000).map(|t| (t as f64).powf(-1.3)).collect();
        let b = vec![1.0; a.len()];
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| paired_sums(&a, &b, |x, y| [x * y, x * x]))
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one[0].to_bits(), four[0].to_bits());
        assert_eq!(one[1].to_bits(), four[1].to_bits());
    }

    #[test]
    fn fmt_round_trips() {
        for x in [0.1, 1.0 / 3.0, 6.02214076e23, -2.5e-300, 0.0] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }
}
