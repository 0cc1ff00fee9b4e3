//! Degree-2 factorization machine parameters and scoring.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSchema;
use crate::scalar::Scalar;
use crate::sparse::SparseVector;

pub const MODEL_VERSION: u32 = 1;

/// Intercept, linear weights and the n × D latent factor matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FmParameters<T> {
    w0: T,
    w: Vec<T>,
    v: Vec<T>,
    latent_dim: usize,
}

impl<T: Scalar> FmParameters<T> {
    /// Zero intercept and linear weights; latent factors drawn from N(0, init_sigma²).
    pub fn init(n: usize, latent_dim: usize, init_sigma: f64, seed: u64) -> Result<Self> {
        if n == 0 || latent_dim == 0 {
            return Err(Error::Config(format!(
                "feature count ({}) and latent dimension ({}) must be positive",
                n, latent_dim
            )));
        }
        if !(init_sigma >= 0.0 && init_sigma.is_finite()) {
            return Err(Error::Config(format!("invalid init_sigma {}", init_sigma)));
        }
        let normal = Normal::new(0.0, init_sigma).expect("finite nonnegative sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * latent_dim)
            .map(|_| T::of(normal.sample(&mut rng)))
            .collect();
        Ok(FmParameters {
            w0: T::zero(),
            w: vec![T::zero(); n],
            v,
            latent_dim,
        })
    }

    pub fn from_parts(w0: T, w: Vec<T>, v: Vec<T>, latent_dim: usize) -> Result<Self> {
        if latent_dim == 0 || v.len() != w.len() * latent_dim {
            return Err(Error::Config(format!(
                "latent matrix of {} values does not match {} features x {} factors",
                v.len(),
                w.len(),
                latent_dim
            )));
        }
        let params = FmParameters {
            w0,
            w,
            v,
            latent_dim,
        };
        if !params.is_finite() {
            return Err(Error::Config("non-finite parameter value".into()));
        }
        Ok(params)
    }

    pub fn n_features(&self) -> usize {
        self.w.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn w0(&self) -> T {
        self.w0
    }

    pub fn w(&self) -> &[T] {
        &self.w
    }

    /// Row-major latent factors.
    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn v_row(&self, i: usize) -> &[T] {
        &self.v[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    pub fn w0_mut(&mut self) -> &mut T {
        &mut self.w0
    }

    pub fn w_mut(&mut self) -> &mut [T] {
        &mut self.w
    }

    pub fn v_mut(&mut self) -> &mut [T] {
        &mut self.v
    }

    pub(crate) fn v_row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.v[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite()
            && self.w.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> FmParameters<U> {
        let conv = |x: &T| U::of(x.as_f64());
        FmParameters {
            w0: U::of(self.w0.as_f64()),
            w: self.w.iter().map(conv).collect(),
            v: self.v.iter().map(conv).collect(),
            latent_dim: self.latent_dim,
        }
    }

    /// r̂(x) = w0 + Σ w_i x_i + Σ_{i<j} ⟨v_i, v_j⟩ x_i x_j, in O(nnz(x)·D).
    pub fn score(&self, x: &SparseVector<T>) -> Result<T> {
        x.check_dimension(self.n_features())?;
        let mut sums = vec![T::zero(); self.latent_dim];
        Ok(self.score_with_sums(x, &mut sums))
    }

    /// Scores a vector already known to fit, leaving Σ_i v_{i,f} x_i in `sums`.
    ///
    /// Pairwise term uses ½ Σ_f [(Σ_i v_{i,f} x_i)² − Σ_i v_{i,f}² x_i²].
    pub(crate) fn score_with_sums(&self, x: &SparseVector<T>, sums: &mut [T]) -> T {
        let d = self.latent_dim;
        let mut squares = T::zero();
        sums.iter_mut().for_each(|s| *s = T::zero());
        let mut linear = T::zero();
        for &(i, xi) in x.entries() {
            linear = linear + self.w[i] * xi;
            let row = &self.v[i * d..(i + 1) * d];
            for (s, &vif) in sums.iter_mut().zip(row) {
                let t = vif * xi;
                *s = *s + t;
                squares = squares + t * t;
            }
        }
        let total = sums.iter().fold(T::zero(), |acc, &s| acc + s * s);
        self.w0 + linear + T::of(0.5) * (total - squares)
    }

    /// Scores `encode_instance(s, event_vec)` for each candidate, preserving input order.
    pub fn score_candidates(
        &self,
        event_vec: &SparseVector<T>,
        candidates: &[usize],
        schema: &FeatureSchema,
    ) -> Result<Vec<(usize, T)>> {
        if schema.dimension() != self.n_features() {
            return Err(Error::IndexOutOfRange {
                index: schema.dimension().saturating_sub(1),
                size: self.n_features(),
            });
        }
        let mut instance = SparseVector::new();
        let mut sums = vec![T::zero(); self.latent_dim];
        candidates
            .iter()
            .map(|&s| {
                schema.encode_instance_into(s, event_vec, &mut instance)?;
                Ok((s, self.score_with_sums(&instance, &mut sums)))
            })
            .collect()
    }

    /// Versioned JSON document tied to `schema` by its hash.
    pub fn to_json(&self, schema: &FeatureSchema) -> String {
        let doc = ModelDocument {
            version: MODEL_VERSION,
            kind: ModelKindTag::Fm,
            n: self.n_features(),
            d: self.latent_dim,
            schema_hash: schema.hash(),
            w0: self.w0.as_f64(),
            w: self.w.iter().map(|x| x.as_f64()).collect(),
            v: self.v.iter().map(|x| x.as_f64()).collect(),
        };
        serde_json::to_string(&doc).expect("model serializes")
    }

    /// Loads a model, rejecting it unless it was saved against `schema`.
    pub fn from_json(text: &str, schema: &FeatureSchema) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.version != MODEL_VERSION {
            return Err(Error::Version {
                found: doc.version,
                expected: MODEL_VERSION,
            });
        }
        let found = schema.hash();
        if doc.schema_hash != found {
            return Err(Error::SchemaMismatch {
                expected: doc.schema_hash,
                found,
            });
        }
        if doc.n != schema.dimension() || doc.w.len() != doc.n {
            return Err(Error::Config(format!(
                "model has {} features, schema has {}",
                doc.n,
                schema.dimension()
            )));
        }
        Self::from_parts(
            T::of(doc.w0),
            doc.w.into_iter().map(T::of).collect(),
            doc.v.into_iter().map(T::of).collect(),
            doc.d,
        )
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ModelKindTag {
    Fm,
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    kind: ModelKindTag,
    n: usize,
    #[serde(rename = "D")]
    d: usize,
    schema_hash: String,
    w0: f64,
    w: Vec<f64>,
    #[serde(rename = "V")]
    v: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::BowWeighting;
    use proptest::prelude::*;

    /// Literal double loop over the pairwise term, on a dense copy of x.
    fn brute_force(params: &FmParameters<f64>, x: &SparseVector<f64>) -> f64 {
        let n = params.n_features();
        let dense: Vec<f64> = (0..n).map(|i| x.get(i)).collect();
        let mut r = params.w0();
        for i in 0..n {
            r += params.w()[i] * dense[i];
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let dot: f64 = params
                    .v_row(i)
                    .iter()
                    .zip(params.v_row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                r += dot * dense[i] * dense[j];
            }
        }
        r
    }

    fn arb_case() -> impl Strategy<Value = (FmParameters<f64>, SparseVector<f64>)> {
        (1usize..=10, 1usize..=3).prop_flat_map(|(n, d)| {
            (
                -1.0f64..1.0,
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n * d),
                prop::collection::btree_map(0..n, 0.1f64..3.0, 0..=n),
            )
                .prop_map(move |(w0, w, v, x)| {
                    (
                        FmParameters::from_parts(w0, w, v, d).unwrap(),
                        SparseVector::from_entries(x.into_iter().collect()).unwrap(),
                    )
                })
        })
    }

    fn tiny_schema(suppliers: usize, purchasers: usize) -> FeatureSchema {
        FeatureSchema::from_parts(
            (0..suppliers).map(|i| format!("s{}", i)).collect(),
            (0..purchasers).map(|i| format!("p{}", i)).collect(),
            vec![],
            vec![],
            BowWeighting::Counts,
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn factorized_matches_brute_force((params, x) in arb_case()) {
            let fast = params.score(&x).unwrap();
            prop_assert!((fast - brute_force(&params, &x)).abs() <= 1e-9);
        }

        #[test]
        fn intercept_shifts_score_exactly((params, x) in arb_case(), c in -5.0f64..5.0) {
            let mut zero = params.clone();
            *zero.w0_mut() = 0.0;
            let mut shifted = params.clone();
            *shifted.w0_mut() = c;
            // exact for the f64 rounding of the shift
            let diff = shifted.score(&x).unwrap() - zero.score(&x).unwrap();
            prop_assert!((diff - c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn intercept_only_model() {
        let mut params = FmParameters::<f64>::init(4, 2, 0.0, 1).unwrap();
        *params.w0_mut() = 2.5;
        for x in [
            SparseVector::new(),
            SparseVector::from_entries(vec![(0, 1.0), (3, 2.0)]).unwrap(),
        ] {
            assert_eq!(params.score(&x).unwrap(), 2.5);
        }
    }

    #[test]
    fn single_pairwise_term() {
        let (a, b) = (0.7f64, -1.3f64);
        let params = FmParameters::from_parts(0.0, vec![0.0, 0.0], vec![a, b], 1).unwrap();
        let x = SparseVector::from_entries(vec![(0, 1.0), (1, 1.0)]).unwrap();
        assert!((params.score(&x).unwrap() - a * b).abs() < 1e-15);
    }

    #[test]
    fn init_contract() {
        let zero = FmParameters::<f64>::init(5, 3, 0.0, 9).unwrap();
        assert!(zero.v().iter().all(|&x| x == 0.0));
        let a = FmParameters::<f64>::init(3, 2, 0.1, 4).unwrap();
        assert_eq!(a, FmParameters::init(3, 2, 0.1, 4).unwrap());
        assert_eq!(a.v().len(), 6);
        assert_eq!(a.w().len(), 3);
        assert_eq!(a.w0(), 0.0);
        assert!(FmParameters::<f64>::init(0, 2, 0.1, 4).is_err());
        assert!(FmParameters::<f64>::init(3, 2, -1.0, 4).is_err());
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let params = FmParameters::<f64>::init(3, 2, 0.1, 0).unwrap();
        let x = SparseVector::from_entries(vec![(3, 1.0)]).unwrap();
        assert!(matches!(
            params.score(&x),
            Err(Error::IndexOutOfRange { index: 3, size: 3 })
        ));
    }

    #[test]
    fn candidate_scores_match_instances() {
        let schema = tiny_schema(5, 2);
        let params = FmParameters::<f64>::init(schema.dimension(), 3, 0.5, 17).unwrap();
        let mut params = params;
        params.w_mut().iter_mut().enumerate().for_each(|(i, w)| *w = 0.1 * i as f64);
        let event = SparseVector::from_entries(vec![(1, 1.0)]).unwrap();
        let all: Vec<usize> = (0..5).collect();
        let batch = params.score_candidates(&event, &all, &schema).unwrap();
        assert_eq!(batch.len(), 5);
        for (s, score) in batch {
            let direct = params
                .score(&schema.encode_instance(s, &event).unwrap())
                .unwrap();
            assert_eq!(score, direct);
        }
        let single = params.score_candidates(&event, &[3], &schema).unwrap();
        assert_eq!(single[0].0, 3);
        assert!(params.score_candidates(&event, &[5], &schema).is_err());
    }

    #[test]
    fn relabeling_suppliers_leaves_scores_invariant() {
        let schema = tiny_schema(4, 2);
        let mut params = FmParameters::<f64>::init(schema.dimension(), 2, 0.7, 5).unwrap();
        params.w_mut()[1] = 0.3;
        params.w_mut()[2] = -0.2;
        let mut swapped = params.clone();
        swapped.w_mut().swap(1, 2);
        for f in 0..2 {
            swapped.v_mut().swap(2 + f, 4 + f);
        }
        let event = SparseVector::from_entries(vec![(0, 1.0)]).unwrap();
        let a = params.score_candidates(&event, &[1, 2], &schema).unwrap();
        let b = swapped.score_candidates(&event, &[2, 1], &schema).unwrap();
        assert_eq!(a[0].1, b[0].1);
        assert_eq!(a[1].1, b[1].1);
    }

    #[test]
    fn f32_scoring_tracks_f64() {
        let schema = tiny_schema(3, 2);
        let params = FmParameters::<f64>::init(schema.dimension(), 4, 0.3, 2).unwrap();
        let narrow: FmParameters<f32> = params.cast();
        let x = schema
            .encode_instance(1, &SparseVector::from_entries(vec![(0, 1.0)]).unwrap())
            .unwrap();
        let wide = params.score(&x).unwrap();
        let low = narrow.score(&x.cast()).unwrap();
        assert!((wide - f64::from(low)).abs() < 1e-5);
    }

    #[test]
    fn persistence_checks_schema_hash() {
        let schema = tiny_schema(3, 2);
        let params = FmParameters::<f64>::init(schema.dimension(), 2, 0.2, 8).unwrap();
        let text = params.to_json(&schema);
        assert_eq!(FmParameters::<f64>::from_json(&text, &schema).unwrap(), params);
        let other = tiny_schema(3, 3);
        assert!(matches!(
            FmParameters::<f64>::from_json(&text, &other),
            Err(Error::SchemaMismatch { .. })
        ));
    }
}
