//! Projection head applied to clip features (or concatenated clip tuples)
//! before similarities are taken: a bias-free linear map, layer normalization
//! with an optional affine part, then l2 normalization. Identity mode skips
//! the first two steps and only l2-normalizes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::store::FeatureSet;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FPP1";
pub const DEFAULT_LN_EPS: f64 = 1e-5;
pub const DEFAULT_OUTPUT_DIM: usize = 1152;
/// Output dimensions swept by the projection-size ablation.
pub const OUTPUT_DIM_PRESETS: [usize; 4] = [512, 1024, 1152, 2048];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    Identity,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    mode: ProjectionMode,
    input_dim: usize,
    output_dim: usize,
    /// `output_dim x input_dim`, row-major.
    pub weight: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    pub ln_eps: f64,
    /// When false, layer norm has no gain/bias and their gradients stay zero.
    pub affine: bool,
}

/// Gradients with the same shapes as the trainable parts of [`ProjectionParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrads {
    pub weight: Vec<f64>,
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionGrads {
    pub fn zeros_like(params: &ProjectionParams) -> Self {
        Self {
            weight: vec![0.0; params.weight.len()],
            gain: vec![0.0; params.gain.len()],
            bias: vec![0.0; params.bias.len()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight
            .iter()
            .chain(&self.gain)
            .chain(&self.bias)
            .all(|&v| v == 0.0)
    }
}

impl ProjectionParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            mode: ProjectionMode::Identity,
            input_dim: dim,
            output_dim: dim,
            weight: Vec::new(),
            gain: Vec::new(),
            bias: Vec::new(),
            ln_eps: DEFAULT_LN_EPS,
            affine: true,
        }
    }

    pub fn learned(
        input_dim: usize,
        output_dim: usize,
        weight: Vec<f64>,
        gain: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidConfig("projection dims must be >= 1".into()));
        }
        if weight.len() != input_dim * output_dim {
            return Err(Error::DimensionMismatch {
                expected: input_dim * output_dim,
                got: weight.len(),
            });
        }
        for v in [&gain, &bias] {
            if v.len() != output_dim {
                return Err(Error::DimensionMismatch {
                    expected: output_dim,
                    got: v.len(),
                });
            }
        }
        if weight
            .iter()
            .chain(&gain)
            .chain(&bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            mode: ProjectionMode::Learned,
            input_dim,
            output_dim,
            weight,
            gain,
            bias,
            ln_eps: DEFAULT_LN_EPS,
            affine: true,
        })
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn is_identity(&self) -> bool {
        self.mode == ProjectionMode::Identity
    }

    pub fn trainable_count(&self) -> usize {
        match self.mode {
            ProjectionMode::Identity => 0,
            ProjectionMode::Learned if self.affine => self.weight.len() + 2 * self.output_dim,
            ProjectionMode::Learned => self.weight.len(),
        }
    }

    /// Identity mode accepts any input dimension.
    fn check_input(&self, x: &[f64]) -> Result<()> {
        if self.mode == ProjectionMode::Learned && x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(())
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        match self.mode {
            ProjectionMode::Identity => {
                let norm = l2(x);
                if norm == 0.0 {
                    return Err(Error::ZeroNorm);
                }
                Ok(Forward {
                    output: x.iter().map(|v| v / norm).collect(),
                    norm,
                    normalized: Vec::new(),
                    std: 0.0,
                })
            }
            ProjectionMode::Learned => {
                let dim = self.output_dim;
                let z: Vec<f64> = self
                    .weight
                    .chunks_exact(self.input_dim)
                    .map(|row| dot(row, x))
                    .collect();
                let mean = z.iter().sum::<f64>() / dim as f64;
                let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
                let std = (var + self.ln_eps).sqrt();
                let normalized: Vec<f64> = z.iter().map(|v| (v - mean) / std).collect();
                let y: Vec<f64> = if self.affine {
                    normalized
                        .iter()
                        .zip(&self.gain)
                        .zip(&self.bias)
                        .map(|((h, g), b)| g * h + b)
                        .collect()
                } else {
                    normalized.clone()
                };
                let norm = l2(&y);
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::ZeroNorm);
                }
                Ok(Forward {
                    output: y.iter().map(|v| v / norm).collect(),
                    norm,
                    normalized,
                    std,
                })
            }
        }
    }

    /// Unit-norm projection of `x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Exact gradients of `<upstream, project(x)>` with respect to the
    /// parameters and to `x`.
    pub fn project_backward(
        &self,
        x: &[f64],
        upstream: &[f64],
    ) -> Result<(ProjectionGrads, Vec<f64>)> {
        let mut grads = ProjectionGrads::zeros_like(self);
        let dx = self.backward_into(x, upstream, &mut grads, true)?;
        Ok((grads, dx))
    }

    /// Adds the parameter gradient of `<upstream, project(x)>` into `grads`.
    pub fn accumulate_backward(
        &self,
        x: &[f64],
        upstream: &[f64],
        grads: &mut ProjectionGrads,
    ) -> Result<()> {
        self.backward_into(x, upstream, grads, false).map(|_| ())
    }

    fn backward_into(
        &self,
        x: &[f64],
        upstream: &[f64],
        grads: &mut ProjectionGrads,
        want_dx: bool,
    ) -> Result<Vec<f64>> {
        let fwd = self.forward(x)?;
        if upstream.len() != fwd.output.len() {
            return Err(Error::DimensionMismatch {
                expected: fwd.output.len(),
                got: upstream.len(),
            });
        }
        // d(y / |y|) = (I - o o^T) / |y|
        let proj = dot(&fwd.output, upstream);
        let dy: Vec<f64> = upstream
            .iter()
            .zip(&fwd.output)
            .map(|(u, o)| (u - o * proj) / fwd.norm)
            .collect();
        if self.mode == ProjectionMode::Identity {
            return Ok(if want_dx { dy } else { Vec::new() });
        }

        let dim = self.output_dim as f64;
        let dh: Vec<f64> = if self.affine {
            for ((gg, gb), (d, h)) in grads
                .gain
                .iter_mut()
                .zip(grads.bias.iter_mut())
                .zip(dy.iter().zip(&fwd.normalized))
            {
                *gg += d * h;
                *gb += d;
            }
            dy.iter().zip(&self.gain).map(|(d, g)| d * g).collect()
        } else {
            dy
        };
        let mean_dh = dh.iter().sum::<f64>() / dim;
        let mean_dh_h = dot(&dh, &fwd.normalized) / dim;
        let dz: Vec<f64> = dh
            .iter()
            .zip(&fwd.normalized)
            .map(|(d, h)| (d - mean_dh - h * mean_dh_h) / fwd.std)
            .collect();

        for (row, &dzi) in grads.weight.chunks_exact_mut(self.input_dim).zip(&dz) {
            if dzi != 0.0 {
                for (w, xi) in row.iter_mut().zip(x) {
                    *w += dzi * xi;
                }
            }
        }
        if !want_dx {
            return Ok(Vec::new());
        }
        let mut dx = vec![0.0; self.input_dim];
        for (row, &dzi) in self.weight.chunks_exact(self.input_dim).zip(&dz) {
            for (g, w) in dx.iter_mut().zip(row) {
                *g += dzi * w;
            }
        }
        Ok(dx)
    }

    pub fn apply_update(&mut self, grads: &ProjectionGrads, lr: f64) {
        for (p, g) in self.weight.iter_mut().zip(&grads.weight) {
            *p -= lr * g;
        }
        if self.affine {
            for (p, g) in self.gain.iter_mut().zip(&grads.gain) {
                *p -= lr * g;
            }
            for (p, g) in self.bias.iter_mut().zip(&grads.bias) {
                *p -= lr * g;
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.output_dim as u32).to_le_bytes());
        match self.mode {
            ProjectionMode::Identity => out.push(0),
            ProjectionMode::Learned => {
                out.push(1);
                for v in self.weight.iter().chain(&self.gain).chain(&self.bias) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Decodes a checkpoint prefix; returns the params and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: "FPP1" });
        }
        if bytes.len() < 13 {
            return Err(Error::TruncatedPayload {
                expected: 13,
                found: bytes.len(),
            });
        }
        let input_dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let output_dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        match bytes[12] {
            0 => {
                if input_dim != output_dim {
                    return Err(Error::InvalidConfig(
                        "identity checkpoint with differing dims".into(),
                    ));
                }
                Ok((Self::identity(input_dim), 13))
            }
            1 => {
                let count = input_dim * output_dim + 2 * output_dim;
                let end = 13 + 8 * count;
                if bytes.len() < end {
                    return Err(Error::TruncatedPayload {
                        expected: end,
                        found: bytes.len(),
                    });
                }
                let values: Vec<f64> = bytes[13..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let (weight, rest) = values.split_at(input_dim * output_dim);
                let (gain, bias) = rest.split_at(output_dim);
                let params = Self::learned(
                    input_dim,
                    output_dim,
                    weight.to_vec(),
                    gain.to_vec(),
                    bias.to_vec(),
                )?;
                Ok((params, end))
            }
            flag => Err(Error::InvalidConfig(format!(
                "unknown projection mode flag {flag}"
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::decode(&bytes)?.0)
    }
}

struct Forward {
    output: Vec<f64>,
    /// l2 norm of the pre-normalization vector.
    norm: f64,
    /// Layer-norm output before the affine part (learned mode only).
    normalized: Vec<f64>,
    std: f64,
}

/// Glorot-uniform weight, unit gain, zero bias.
pub fn init_projection(input_dim: usize, output_dim: usize, seed: u64) -> Result<ProjectionParams> {
    let mut rng = SeedStream::new(seed);
    let a = (6.0 / (input_dim + output_dim) as f64).sqrt();
    let weight = (0..input_dim * output_dim)
        .map(|_| rng.symmetric(a))
        .collect();
    ProjectionParams::learned(
        input_dim,
        output_dim,
        weight,
        vec![1.0; output_dim],
        vec![0.0; output_dim],
    )
}

/// Concatenates the clips named by `tuple`, in tuple order.
pub fn concat_tuple(fs: &FeatureSet, tuple: &[usize]) -> Result<Vec<f64>> {
    if tuple.is_empty() {
        return Err(Error::Empty("tuple"));
    }
    let mut out = Vec::with_capacity(tuple.len() * fs.d());
    for &i in tuple {
        if i >= fs.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: fs.n(),
            });
        }
        out.extend(fs.clip(i).iter().map(|&v| v as f64));
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_params(rng: &mut SeedStream, input: usize, output: usize) -> ProjectionParams {
        let weight = (0..input * output).map(|_| rng.normal()).collect();
        let gain = (0..output).map(|_| 1.0 + 0.3 * rng.normal()).collect();
        let bias = (0..output).map(|_| 0.3 * rng.normal()).collect();
        ProjectionParams::learned(input, output, weight, gain, bias).unwrap()
    }

    // Central differences of <u, project(x)> in a parameter picked by `poke`.
    fn fd<F: Fn(&mut ProjectionParams, f64)>(
        p: &ProjectionParams,
        x: &[f64],
        u: &[f64],
        poke: F,
    ) -> f64 {
        let h = 1e-6;
        let mut plus = p.clone();
        poke(&mut plus, h);
        let mut minus = p.clone();
        poke(&mut minus, -h);
        let fp = dot(u, &plus.project(x).unwrap());
        let fm = dot(u, &minus.project(x).unwrap());
        (fp - fm) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
    }

    #[test]
    fn identity_normalizes() {
        let p = ProjectionParams::identity(2);
        let out = p.project(&[3.0, 4.0]).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn identity_rejects_zero() {
        let err = ProjectionParams::identity(2)
            .project(&[0.0, 0.0])
            .unwrap_err();
        assert_eq!(err.to_string(), "zero-norm feature");
    }

    #[test]
    fn learned_identity_weights() {
        let p =
            ProjectionParams::learned(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![1.0; 2], vec![0.0; 2])
                .unwrap();
        let out = p.project(&[1.0, 3.0]).unwrap();
        assert!((out[0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert!((out[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
    }

    #[test]
    fn learned_dimension_mismatch() {
        let p = init_projection(3, 2, 0).unwrap();
        assert!(matches!(
            p.project(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SeedStream::new(1);
        let p = random_params(&mut rng, 4, 5);
        let x: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let (g, dx) = p.project_backward(&x, &[0.0; 5]).unwrap();
        assert!(g.is_zero());
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_backward_is_normalization_jacobian() {
        let p = ProjectionParams::identity(3);
        let x = [1.0, -2.0, 0.5];
        let u = [0.3, 0.1, -0.7];
        let (g, dx) = p.project_backward(&x, &u).unwrap();
        assert!(g.is_zero());
        let n = l2(&x);
        let xu = dot(&x, &u);
        for i in 0..3 {
            let expected = u[i] / n - x[i] * xu / n.powi(3);
            assert!((dx[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn analytic_grads_match_finite_differences() {
        let mut rng = SeedStream::new(2024);
        for trial in 0..100 {
            let input = 1 + (rng.below(16) as usize);
            let output = 2 + (rng.below(15) as usize);
            let p = random_params(&mut rng, input, output);
            let x: Vec<f64> = (0..input).map(|_| rng.normal()).collect();
            let u: Vec<f64> = (0..output).map(|_| rng.normal()).collect();
            let (g, dx) = p.project_backward(&x, &u).unwrap();
            for k in 0..p.weight.len() {
                let n = fd(&p, &x, &u, |q, h| q.weight[k] += h);
                assert!(
                    rel_err(g.weight[k], n) < 1e-5,
                    "trial {trial} w{k}: {} vs {n}",
                    g.weight[k]
                );
            }
            for k in 0..output {
                let n = fd(&p, &x, &u, |q, h| q.gain[k] += h);
                assert!(rel_err(g.gain[k], n) < 1e-5, "trial {trial} g{k}");
                let n = fd(&p, &x, &u, |q, h| q.bias[k] += h);
                assert!(rel_err(g.bias[k], n) < 1e-5, "trial {trial} b{k}");
            }
            for k in 0..input {
                let h = 1e-6;
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let n = (dot(&u, &p.project(&xp).unwrap()) - dot(&u, &p.project(&xm).unwrap()))
                    / (2.0 * h);
                assert!(rel_err(dx[k], n) < 1e-5, "trial {trial} x{k}");
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_projection(12, 7, 5).unwrap();
        let b = init_projection(12, 7, 5).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 19.0).sqrt();
        assert!(a.weight.iter().all(|w| w.abs() <= bound));
        assert!(a.gain.iter().all(|&g| g == 1.0));
        assert!(a.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn concat_respects_order() {
        let fs = FeatureSet::from_clips("v", &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(
            concat_tuple(&fs, &[0, 1]).unwrap(),
            vec![1.0, 0.0, 0.0, 1.0]
        );
        assert_eq!(
            concat_tuple(&fs, &[1, 0]).unwrap(),
            vec![0.0, 1.0, 1.0, 0.0]
        );
        assert!(matches!(
            concat_tuple(&fs, &[2]),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_projection(3, 4, 9).unwrap();
        let bytes = p.encode();
        assert_eq!(bytes.len(), 13 + 8 * (12 + 8));
        let (back, used) = ProjectionParams::decode(&bytes).unwrap();
        assert_eq!(back, p);
        assert_eq!(used, bytes.len());
        let id = ProjectionParams::identity(6);
        assert_eq!(ProjectionParams::decode(&id.encode()).unwrap().0, id);
        let mut bad = bytes.clone();
        bad[3] = b'0';
        assert!(ProjectionParams::decode(&bad).is_err());
        assert!(ProjectionParams::decode(&bytes[..40]).is_err());
    }

    proptest! {
        #[test]
        fn output_is_unit_norm(seed in any::<u64>(), input in 1usize..12, output in 2usize..12) {
            let mut rng = SeedStream::new(seed);
            let p = random_params(&mut rng, input, output);
            let x: Vec<f64> = (0..input).map(|_| rng.normal()).collect();
            if let Ok(out) = p.project(&x) {
                prop_assert!((l2(&out) - 1.0).abs() < 1e-6);
            }
            let out = ProjectionParams::identity(input).project(&x).unwrap();
            prop_assert!((l2(&out) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn identity_is_scale_invariant(seed in any::<u64>(), c in 0.001f64..1000.0) {
            let mut rng = SeedStream::new(seed);
            // power-of-two scales keep the check exact
            let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let p = ProjectionParams::identity(6);
            let a = p.project(&x).unwrap();
            let b = p.project(&x.iter().map(|v| v * c).collect::<Vec<_>>()).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-15);
            }
            let scaled = p.project(&x.iter().map(|v| v * 8.0).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(a, scaled);
        }
    }
}
