//! Regular (3,6) LDPC codes: Gallager-ensemble construction, systematic
//! encoding by Gaussian elimination and flooding sum-product decoding.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const VAR_DEGREE: usize = 3;
pub const CHECK_DEGREE: usize = 6;
pub const DEFAULT_MAX_ITERS: usize = 50;
/// Decoder message magnitude cap.
pub const MESSAGE_CLIP: f64 = 50.0;

const SWAP_RETRIES: usize = 100;
const REDRAWS: usize = 50;

/// Packed GF(2) row.
#[derive(Debug, Clone, PartialEq, Eq)]
struct BitRow(Vec<u64>);

impl BitRow {
    fn zeros(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }
    #[inline]
    fn get(&self, i: usize) -> bool {
        (self.0[i / 64] >> (i % 64)) & 1 == 1
    }
    #[inline]
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn xor_with(&mut self, other: &BitRow) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a ^= b;
        }
    }
    fn dot(&self, other: &BitRow) -> u8 {
        let ones: u32 = self.0.iter().zip(&other.0).map(|(a, b)| (a & b).count_ones()).sum();
        (ones & 1) as u8
    }
}

/// Systematic encoder: message bits sit at `info_positions`; each pivot column
/// is the parity of the free columns selected by its reduced row.
#[derive(Debug, Clone)]
struct Encoder {
    /// Free (non-pivot) columns in increasing order.
    free: Vec<usize>,
    /// `(pivot column, row over free-column index)`.
    pivots: Vec<(usize, BitRow)>,
}

/// Sparse parity-check code with an attached systematic encoder.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    n: usize,
    m: usize,
    seed: u64,
    /// CSR over checks: edges of check `c` are `check_ptr[c]..check_ptr[c+1]`.
    check_ptr: Vec<usize>,
    edge_var: Vec<u32>,
    /// Edge ids incident to each variable.
    var_edges: Vec<Vec<u32>>,
    encoder: Encoder,
    message_len: usize,
}

/// Output of [`LdpcCode::decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutcome {
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

impl LdpcCode {
    /// Random regular (3,6) code of length `n` (even, at least 96).
    pub fn construct(n: usize, seed: u64) -> Result<Self> {
        if n % 2 != 0 || n < 96 {
            return Err(Error::Construction {
                n,
                seed,
                reason: "n must be even and at least 96".into(),
            });
        }
        let m = n / 2;
        let mut rng = rng::stream(seed, Domain::Construction, 0);
        for _ in 0..REDRAWS {
            if let Some(checks) = draw_socket_matching(n, m, &mut rng) {
                let code = Self::from_checks(n, checks, seed)?;
                return Ok(code);
            }
        }
        Err(Error::Construction {
            n,
            seed,
            reason: format!("could not remove double edges after {REDRAWS} redraws"),
        })
    }

    /// Builds a code from the variable lists of each check.
    fn from_checks(n: usize, checks: Vec<Vec<u32>>, seed: u64) -> Result<Self> {
        let m = checks.len();
        let mut check_ptr = Vec::with_capacity(m + 1);
        let mut edge_var = Vec::new();
        let mut var_edges = vec![Vec::new(); n];
        check_ptr.push(0);
        for vars in &checks {
            for &v in vars {
                if v as usize >= n {
                    return Err(Error::Construction {
                        n,
                        seed,
                        reason: format!("variable index {v} out of range"),
                    });
                }
                var_edges[v as usize].push(edge_var.len() as u32);
                edge_var.push(v);
            }
            check_ptr.push(edge_var.len());
        }
        let encoder = build_encoder(n, &checks);
        let rank = encoder.pivots.len();
        let message_len = (n - rank).min(n - m);
        Ok(Self {
            n,
            m,
            seed,
            check_ptr,
            edge_var,
            var_edges,
            encoder,
            message_len,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rank(&self) -> usize {
        self.encoder.pivots.len()
    }

    /// Dimension `n - rank(H)`.
    pub fn dimension(&self) -> usize {
        self.n - self.rank()
    }

    /// Message bits carried per codeword; free positions beyond `n - m` are frozen to zero.
    pub fn message_len(&self) -> usize {
        self.message_len
    }

    /// Codeword positions carrying the message, in message order.
    pub fn info_positions(&self) -> &[usize] {
        &self.encoder.free[..self.message_len]
    }

    pub fn column_weights(&self) -> Vec<usize> {
        self.var_edges.iter().map(Vec::len).collect()
    }

    pub fn row_weights(&self) -> Vec<usize> {
        self.check_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Variables of check `c`.
    pub fn check(&self, c: usize) -> &[u32] {
        &self.edge_var[self.check_ptr[c]..self.check_ptr[c + 1]]
    }

    /// `H c` over GF(2) is zero.
    pub fn is_codeword(&self, word: &[u8]) -> bool {
        (0..self.m).all(|c| self.check(c).iter().fold(0u8, |acc, &v| acc ^ word[v as usize]) == 0)
    }

    pub fn encode(&self, message: &[u8]) -> Result<Vec<u8>> {
        if message.len() != self.message_len {
            return Err(Error::LengthMismatch {
                expected: self.message_len,
                actual: message.len(),
            });
        }
        let free = &self.encoder.free;
        let mut packed = BitRow::zeros(free.len());
        let mut word = vec![0u8; self.n];
        for (i, &b) in message.iter().enumerate() {
            if b & 1 == 1 {
                packed.set(i);
                word[free[i]] = 1;
            }
        }
        for (col, row) in &self.encoder.pivots {
            word[*col] = row.dot(&packed);
        }
        Ok(word)
    }

    pub fn extract_message(&self, word: &[u8]) -> Vec<u8> {
        self.info_positions().iter().map(|&p| word[p]).collect()
    }

    /// Flooding sum-product decoding.
    ///
    /// `llrs` follow the crate convention `log P(bit = 1) / P(bit = 0)`.
    /// Decoding stops as soon as the hard decision satisfies every check;
    /// a posterior of exactly zero counts as undecided and blocks convergence.
    pub fn decode(&self, llrs: &[f64], max_iters: usize) -> Result<DecodeOutcome> {
        if llrs.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: llrs.len(),
            });
        }
        let max_iters = max_iters.max(1);
        // internal messages use log P(0)/P(1)
        let channel: Vec<f64> = llrs.iter().map(|&l| (-l).clamp(-MESSAGE_CLIP, MESSAGE_CLIP)).collect();
        let edges = self.edge_var.len();
        let mut v2c: Vec<f64> = self.edge_var.iter().map(|&v| channel[v as usize]).collect();
        let mut c2v = vec![0.0f64; edges];
        let mut total = channel.clone();
        let mut bits = vec![0u8; self.n];
        let mut tanhs = Vec::with_capacity(CHECK_DEGREE);
        let mut prefix = Vec::with_capacity(CHECK_DEGREE + 1);

        for iter in 1..=max_iters {
            for c in 0..self.m {
                let (lo, hi) = (self.check_ptr[c], self.check_ptr[c + 1]);
                tanhs.clear();
                tanhs.extend(v2c[lo..hi].iter().map(|&x| (0.5 * x).tanh()));
                prefix.clear();
                prefix.push(1.0);
                for &t in &tanhs {
                    let last = *prefix.last().expect("nonempty");
                    prefix.push(last * t);
                }
                let mut suffix = 1.0;
                for j in (0..tanhs.len()).rev() {
                    let p = (prefix[j] * suffix).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                    c2v[lo + j] = (2.0 * odd_atanh(p)).clamp(-MESSAGE_CLIP, MESSAGE_CLIP);
                    suffix *= tanhs[j];
                }
            }
            let mut undecided = false;
            for v in 0..self.n {
                let es = &self.var_edges[v];
                let t = channel[v] + es.iter().map(|&e| c2v[e as usize]).sum::<f64>();
                total[v] = t;
                for &e in es {
                    v2c[e as usize] = (t - c2v[e as usize]).clamp(-MESSAGE_CLIP, MESSAGE_CLIP);
                }
                bits[v] = u8::from(t < 0.0);
                undecided |= t == 0.0;
            }
            if !undecided && self.is_codeword(&bits) {
                return Ok(DecodeOutcome {
                    bits,
                    converged: true,
                    iterations: iter,
                });
            }
        }
        Ok(DecodeOutcome {
            bits,
            converged: false,
            iterations: max_iters,
        })
    }

    /// Check-to-variable messages of one check for the given incoming messages
    /// (internal `log P0/P1` convention). Exposed for property tests.
    pub fn check_update(incoming: &[f64]) -> Vec<f64> {
        let tanhs: Vec<f64> = incoming.iter().map(|&x| (0.5 * x).tanh()).collect();
        (0..incoming.len())
            .map(|j| {
                let p: f64 = tanhs.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, t)| t).product();
                (2.0 * odd_atanh(p.clamp(-1.0 + 1e-15, 1.0 - 1e-15))).clamp(-MESSAGE_CLIP, MESSAGE_CLIP)
            })
            .collect()
    }

    /// Writes `H` as "n m" followed by one "row col" line per nonzero.
    pub fn write_sparse<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.n, self.m)?;
        for c in 0..self.m {
            for &v in self.check(c) {
                writeln!(w, "{c} {v}")?;
            }
        }
        Ok(())
    }

    /// Reads the format written by [`write_sparse`](Self::write_sparse).
    pub fn read_sparse<R: BufRead>(r: R, seed: u64) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::config("ldpc", "empty parity-check file"))??;
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.parse::<usize>()
                .map_err(|_| Error::config("ldpc", format!("bad {what} `{s}`")))
        };
        let mut it = header.split_whitespace();
        let (n, m) = match (it.next(), it.next()) {
            (Some(a), Some(b)) => (parse(a, "n")?, parse(b, "m")?),
            _ => return Err(Error::config("ldpc", "header must be `n m`")),
        };
        let mut checks: Vec<Vec<u32>> = vec![Vec::new(); m];
        for line in lines {
            let line = line?;
            let mut it = line.split_whitespace();
            let (Some(a), Some(b)) = (it.next(), it.next()) else {
                continue;
            };
            let (row, col) = (parse(a, "row")?, parse(b, "col")?);
            if row >= m || col >= n {
                return Err(Error::config("ldpc", format!("entry ({row}, {col}) outside {m}x{n}")));
            }
            checks[row].push(col as u32);
        }
        Self::from_checks(n, checks, seed)
    }
}

/// `atanh` evaluated on `|x|` so that it is exactly odd.
#[inline]
fn odd_atanh(x: f64) -> f64 {
    x.abs().atanh().copysign(x)
}

/// One Gallager-ensemble draw: variable sockets matched to check sockets by a
/// random permutation, then double edges removed by socket swaps.
fn draw_socket_matching<R: Rng>(n: usize, m: usize, rng: &mut R) -> Option<Vec<Vec<u32>>> {
    let mut sockets: Vec<u32> = (0..n as u32).flat_map(|v| [v; VAR_DEGREE]).collect();
    sockets.shuffle(rng);
    // sockets[c * 6 + j] is the variable on socket j of check c
    let has_dup = |s: &[u32], c: usize| {
        let row = &s[c * CHECK_DEGREE..(c + 1) * CHECK_DEGREE];
        (0..CHECK_DEGREE).any(|i| row[i + 1..].contains(&row[i]))
    };
    for _ in 0..SWAP_RETRIES {
        let bad: Vec<usize> = (0..m).filter(|&c| has_dup(&sockets, c)).collect();
        if bad.is_empty() {
            let checks = sockets.chunks_exact(CHECK_DEGREE).map(|r| r.to_vec()).collect();
            return Some(checks);
        }
        for c in bad {
            let base = c * CHECK_DEGREE;
            for i in 0..CHECK_DEGREE {
                let v = sockets[base + i];
                let row_dup = (0..CHECK_DEGREE).any(|j| j != i && sockets[base + j] == v);
                if !row_dup {
                    continue;
                }
                // swap with a random socket of another check whose variable fits here
                let other = rng.gen_range(0..sockets.len());
                let oc = other / CHECK_DEGREE;
                if oc == c {
                    continue;
                }
                let w = sockets[other];
                let obase = oc * CHECK_DEGREE;
                let fits_here = !(0..CHECK_DEGREE).any(|j| sockets[base + j] == w);
                let fits_there = !(0..CHECK_DEGREE).any(|j| obase + j != other && sockets[obase + j] == v);
                if fits_here && fits_there {
                    sockets.swap(base + i, other);
                }
            }
        }
    }
    None
}

/// Reduced row echelon form of `H` with column pivoting.
fn build_encoder(n: usize, checks: &[Vec<u32>]) -> Encoder {
    let mut rows: Vec<BitRow> = checks
        .iter()
        .map(|vars| {
            let mut r = BitRow::zeros(n);
            for &v in vars {
                // duplicate entries cancel over GF(2)
                r.0[v as usize / 64] ^= 1 << (v % 64);
            }
            r
        })
        .collect();
    let mut pivot_cols = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        if rank == rows.len() {
            break;
        }
        let Some(p) = (rank..rows.len()).find(|&r| rows[r].get(col)) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row.get(col) {
                row.xor_with(&pivot);
            }
        }
        pivot_cols.push(col);
        rank += 1;
    }
    let mut is_pivot = vec![false; n];
    for &c in &pivot_cols {
        is_pivot[c] = true;
    }
    let free: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let pivots = pivot_cols
        .iter()
        .zip(&rows)
        .map(|(&col, row)| {
            let mut packed = BitRow::zeros(free.len());
            for (i, &f) in free.iter().enumerate() {
                if row.get(f) {
                    packed.set(i);
                }
            }
            (col, packed)
        })
        .collect();
    Encoder { free, pivots }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;
    use rand::Rng;

    /// Dense GF(2) product `H c`, independent of the CSR checks.
    fn syndrome_dense(code: &LdpcCode, word: &[u8]) -> Vec<u8> {
        let mut h = vec![vec![0u8; code.n()]; code.m()];
        for (c, row) in h.iter_mut().enumerate() {
            for &v in code.check(c) {
                row[v as usize] ^= 1;
            }
        }
        h.iter()
            .map(|row| row.iter().zip(word).map(|(a, b)| a & b).fold(0, |x, y| x ^ y))
            .collect()
    }

    #[test]
    fn degrees_are_regular() {
        let code = LdpcCode::construct(96, 1).unwrap();
        assert!(code.column_weights().iter().all(|&w| w == 3));
        assert!(code.row_weights().iter().all(|&w| w == 6));
        for c in 0..code.m() {
            let mut vars = code.check(c).to_vec();
            vars.sort_unstable();
            vars.dedup();
            assert_eq!(vars.len(), 6, "double edge in check {c}");
        }
        assert!(code.dimension() >= code.n() / 2);
        assert_eq!(code.message_len(), code.n() / 2);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(matches!(LdpcCode::construct(101, 0), Err(Error::Construction { n: 101, .. })));
        assert!(LdpcCode::construct(90, 0).is_err());
    }

    #[test]
    fn zero_message_encodes_to_zero() {
        let code = LdpcCode::construct(96, 2).unwrap();
        let word = code.encode(&vec![0; code.message_len()]).unwrap();
        assert!(word.iter().all(|&b| b == 0));
        assert!(code.is_codeword(&word));
    }

    #[test]
    fn random_messages_are_codewords_n2400() {
        let code = LdpcCode::construct(2400, 3).unwrap();
        let mut rng = stream(3, Domain::Sample, 0);
        for _ in 0..100 {
            let msg: Vec<u8> = (0..code.message_len()).map(|_| rng.gen_range(0..2)).collect();
            let word = code.encode(&msg).unwrap();
            assert!(syndrome_dense(&code, &word).iter().all(|&s| s == 0));
            assert_eq!(code.extract_message(&word), msg);
        }
    }

    fn llrs_for(word: &[u8], mag: f64) -> Vec<f64> {
        word.iter().map(|&b| if b == 1 { mag } else { -mag }).collect()
    }

    #[test]
    fn noiseless_codeword_decodes_in_one_iteration() {
        let code = LdpcCode::construct(96, 4).unwrap();
        let mut rng = stream(4, Domain::Sample, 0);
        let msg: Vec<u8> = (0..code.message_len()).map(|_| rng.gen_range(0..2)).collect();
        let word = code.encode(&msg).unwrap();
        let out = code.decode(&llrs_for(&word, 50.0), 50).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.bits, word);
    }

    #[test]
    fn corrects_single_confident_error() {
        let code = LdpcCode::construct(96, 5).unwrap();
        let mut rng = stream(5, Domain::Sample, 0);
        for _ in 0..20 {
            let msg: Vec<u8> = (0..code.message_len()).map(|_| rng.gen_range(0..2)).collect();
            let word = code.encode(&msg).unwrap();
            let mut llrs = llrs_for(&word, 50.0);
            let flip = rng.gen_range(0..code.n());
            llrs[flip] = -llrs[flip];
            let out = code.decode(&llrs, 50).unwrap();
            assert!(out.converged);
            assert_eq!(out.bits, word);
        }
    }

    #[test]
    fn no_information_does_not_converge() {
        let code = LdpcCode::construct(96, 6).unwrap();
        let out = code.decode(&vec![0.0; 96], 50).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 50);
        assert!(code.decode(&[0.0; 10], 5).is_err());
    }

    #[test]
    fn noiseless_frames_have_zero_errors() {
        let code = LdpcCode::construct(192, 7).unwrap();
        let mut rng = stream(7, Domain::Sample, 0);
        for _ in 0..1000 {
            let msg: Vec<u8> = (0..code.message_len()).map(|_| rng.gen_range(0..2)).collect();
            let word = code.encode(&msg).unwrap();
            let out = code.decode(&llrs_for(&word, 50.0), 50).unwrap();
            assert_eq!(code.extract_message(&out.bits), msg);
        }
    }

    #[test]
    fn sparse_round_trip() {
        let code = LdpcCode::construct(96, 8).unwrap();
        let mut buf = Vec::new();
        code.write_sparse(&mut buf).unwrap();
        let back = LdpcCode::read_sparse(std::io::Cursor::new(buf), 8).unwrap();
        for c in 0..code.m() {
            assert_eq!(back.check(c), code.check(c));
        }
        assert!(LdpcCode::read_sparse(std::io::Cursor::new("4 2\n0 9\n"), 0).is_err());
    }

    proptest! {
        #[test]
        fn check_update_is_sign_symmetric(msgs in proptest::collection::vec(-30.0f64..30.0, 6)) {
            let pos = LdpcCode::check_update(&msgs);
            let neg_in: Vec<f64> = msgs.iter().map(|x| -x).collect();
            let neg = LdpcCode::check_update(&neg_in);
            for (a, b) in pos.iter().zip(&neg) {
                prop_assert!((a + b).abs() < 1e-12);
            }
        }
    }
}
