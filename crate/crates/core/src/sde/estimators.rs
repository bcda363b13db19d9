use crate::error::{Error, Result};
use crate::matops::{mcal_moment, trace, vec, vech_len, Mat, SymMat, Vector};
use crate::sysmodel::FeedbackGain;

/// Expectations behind one row of the data matrices: second moments of the
/// state at both ends of the window and the time integrals of `E[XXᵀ]`,
/// `E[uXᵀ]` and `E[uuᵀ]` over it.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMoments {
    pub start: Mat,
    pub end: Mat,
    pub int_xx: Mat,
    pub int_ux: Mat,
    pub int_uu: Mat,
}

impl RowMoments {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            start: Mat::zeros(n, n),
            end: Mat::zeros(n, n),
            int_xx: Mat::zeros(n, n),
            int_ux: Mat::zeros(m, n),
            int_uu: Mat::zeros(m, m),
        }
    }

    pub fn n(&self) -> usize {
        self.start.nrows()
    }

    pub fn m(&self) -> usize {
        self.int_uu.nrows()
    }

    /// All entries, field by field in declaration order, each column-major.
    pub fn flatten(&self) -> Vec<f64> {
        [&self.start, &self.end, &self.int_xx, &self.int_ux, &self.int_uu]
            .into_iter()
            .flat_map(|a| a.iter().copied())
            .collect()
    }

    pub(crate) fn scale(&mut self, s: f64) {
        for a in [
            &mut self.start,
            &mut self.end,
            &mut self.int_xx,
            &mut self.int_ux,
            &mut self.int_uu,
        ] {
            *a *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            (&self.start, &other.start),
            (&self.end, &other.end),
            (&self.int_xx, &other.int_xx),
            (&self.int_ux, &other.int_ux),
            (&self.int_uu, &other.int_uu),
        ]
        .iter()
        .map(|(a, b)| (*a - *b).amax())
        .fold(0.0, f64::max)
    }
}

/// The policy-independent data matrices `Ξ`, `𝕀ₓₓ`, `𝕀ₓᵤ`, `𝕄ᵤ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdpDataMatrices {
    pub xi: Mat,
    pub i_xx: Mat,
    pub i_xu: Mat,
    pub m_u: Mat,
}

impl AdpDataMatrices {
    pub fn from_moments(rows: &[RowMoments]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidParameter("no sub-batches to build data matrices from".into()))?;
        let (n, m) = (first.n(), first.m());
        let l = rows.len();
        let mut out = Self {
            xi: Mat::zeros(l, vech_len(n)),
            i_xx: Mat::zeros(l, n * n),
            i_xu: Mat::zeros(l, n * m),
            m_u: Mat::zeros(l, vech_len(m)),
        };
        for (h, r) in rows.iter().enumerate() {
            if r.n() != n || r.m() != m {
                return Err(Error::Dimension(format!("sub-batch {h} has mismatched dimensions")));
            }
            let xi = mcal_moment(&r.end) - mcal_moment(&r.start);
            out.xi.row_mut(h).copy_from(&xi.transpose());
            out.i_xx.row_mut(h).copy_from(&vec(&r.int_xx).transpose());
            out.i_xu.row_mut(h).copy_from(&vec(&r.int_ux).transpose());
            out.m_u.row_mut(h).copy_from(&mcal_moment(&r.int_uu).transpose());
        }
        Ok(out)
    }

    pub fn l(&self) -> usize {
        self.xi.nrows()
    }

    pub fn n(&self) -> usize {
        (self.i_xx.ncols() as f64).sqrt().round() as usize
    }

    pub fn m(&self) -> usize {
        self.i_xu.ncols() / self.n().max(1)
    }
}

/// The gain-dependent blocks `𝕄ₖₓ` and `𝕁ₖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMatrices {
    pub m_kx: Mat,
    pub j_k: Vector,
}

/// Evaluate `𝕄ₖₓ` and `𝕁ₖ` for gain `k` from stored moments; only
/// `∫E[XXᵀ]` enters, so any gain can be evaluated on the same data.
pub fn policy_matrices(rows: &[RowMoments], k: &FeedbackGain, q: &SymMat, r: &SymMat) -> Result<PolicyMatrices> {
    let first = rows
        .first()
        .ok_or_else(|| Error::InvalidParameter("no sub-batches to build policy matrices from".into()))?;
    let (n, m) = (first.n(), first.m());
    if k.nrows() != m || k.ncols() != n || q.dim() != n || r.dim() != m {
        return Err(Error::Dimension(format!(
            "gain {}×{}, Q {}×{}, R {}×{} do not fit n = {n}, m = {m}",
            k.nrows(),
            k.ncols(),
            q.dim(),
            q.dim(),
            r.dim(),
            r.dim()
        )));
    }
    let kk = k.as_mat();
    let weight = q.as_mat() + kk.transpose() * r.as_mat() * kk;
    let mut m_kx = Mat::zeros(rows.len(), vech_len(m));
    let mut j_k = Vector::zeros(rows.len());
    for (h, row) in rows.iter().enumerate() {
        let kxk = kk * &row.int_xx * kk.transpose();
        m_kx.row_mut(h).copy_from(&mcal_moment(&kxk).transpose());
        j_k[h] = -trace(&(&weight * &row.int_xx));
    }
    Ok(PolicyMatrices { m_kx, j_k })
}

/// `(1/N) Σ x xᵀ` over the given initial states.
pub fn estimate_sigma0(samples: &[Vector]) -> Result<SymMat> {
    if samples.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 initial-state samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    let mut acc = Mat::zeros(n, n);
    for x in samples {
        if x.len() != n {
            return Err(Error::Dimension("initial-state samples have mixed lengths".into()));
        }
        acc += x * x.transpose();
    }
    acc /= samples.len() as f64;
    Ok(SymMat::symmetrize(&acc))
}
