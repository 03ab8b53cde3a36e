//! One-dimensional nodal basis machinery: Gauss–Lobatto node sets,
//! Gauss–Legendre quadrature, and Lagrange evaluation.
//!
//! Everything on this level lives on the reference interval `[-1, 1]`;
//! the assembly code applies the affine scalings.

/// Legendre polynomial `P_n` and its derivative at `x` (three-term
/// recurrence).
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    let dp = if x.abs() == 1.0 {
        let nf = n as f64;
        x.powi(n as i32 - 1) * nf * (nf + 1.0) / 2.0
    } else {
        (n as f64) * (x * p - p_prev) / (x * x - 1.0)
    };
    (p, dp)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, exact for polynomials of
/// degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Gauss–Lobatto node set with `p + 1` points: endpoints plus the roots of
/// `P_p'`. For `p = 0` the single node sits at the element center.
pub fn gauss_lobatto(p: usize) -> Vec<f64> {
    match p {
        0 => vec![0.0],
        1 => vec![-1.0, 1.0],
        _ => {
            let mut nodes = vec![0.0; p + 1];
            nodes[0] = -1.0;
            nodes[p] = 1.0;
            for i in 1..p {
                // interior nodes: roots of P_p'; Newton with a Chebyshev guess,
                // using (1-x²)P_p'' = 2xP_p' - p(p+1)P_p
                let mut x = -(std::f64::consts::PI * i as f64 / p as f64).cos();
                for _ in 0..100 {
                    let (pp, dp) = legendre(p, x);
                    let d2p = (2.0 * x * dp - (p * (p + 1)) as f64 * pp) / (1.0 - x * x);
                    let dx = dp / d2p;
                    x -= dx;
                    if dx.abs() <= 1e-15 {
                        break;
                    }
                }
                nodes[i] = x;
            }
            nodes
        }
    }
}

/// Lagrange basis on a fixed node set, evaluated by direct products so values
/// are exact (0/1) at the nodes themselves.
#[derive(Debug, Clone)]
pub struct Lagrange {
    pub nodes: Vec<f64>,
}

impl Lagrange {
    pub fn new(nodes: Vec<f64>) -> Self {
        Lagrange { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// `ℓ_i(x) = Π_{j≠i} (x - t_j)/(t_i - t_j)`.
    pub fn value(&self, i: usize, x: f64) -> f64 {
        let ti = self.nodes[i];
        let mut v = 1.0;
        for (j, &tj) in self.nodes.iter().enumerate() {
            if j != i {
                v *= (x - tj) / (ti - tj);
            }
        }
        v
    }

    /// `ℓ_i'(x)` by the product rule; exact everywhere, nodes included.
    pub fn deriv(&self, i: usize, x: f64) -> f64 {
        let ti = self.nodes[i];
        let mut sum = 0.0;
        for (k, &tk) in self.nodes.iter().enumerate() {
            if k == i {
                continue;
            }
            let mut term = 1.0 / (ti - tk);
            for (j, &tj) in self.nodes.iter().enumerate() {
                if j != i && j != k {
                    term *= (x - tj) / (ti - tj);
                }
            }
            sum += term;
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_near(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn lobatto_nodes_match_closed_forms() {
        assert_eq!(gauss_lobatto(0), vec![0.0]);
        assert_eq!(gauss_lobatto(1), vec![-1.0, 1.0]);
        let p2 = gauss_lobatto(2);
        assert_near(p2[1], 0.0, 1e-15);
        let p3 = gauss_lobatto(3);
        assert_near(p3[1], -(0.2f64).sqrt(), 1e-14);
        assert_near(p3[2], (0.2f64).sqrt(), 1e-14);
    }

    #[test]
    fn legendre_quadrature_is_exact_for_low_degrees() {
        for n in 1..=5usize {
            let (x, w) = gauss_legendre(n);
            assert_near(w.iter().sum::<f64>(), 2.0, 1e-14);
            // ∫ x^k on [-1,1] for all k ≤ 2n-1
            for k in 0..2 * n {
                let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(k as i32)).sum();
                let want = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
                assert_near(got, want, 1e-13);
            }
        }
    }

    #[test]
    fn lagrange_cardinality_and_partition_of_unity() {
        let basis = Lagrange::new(gauss_lobatto(3));
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let v = basis.value(i, basis.nodes[j]);
                assert_near(v, if i == j { 1.0 } else { 0.0 }, 1e-13);
            }
        }
        // partition of unity and its derivative at off-node points
        for &x in &[-0.9, -0.3, 0.123, 0.77] {
            let s: f64 = (0..basis.len()).map(|i| basis.value(i, x)).sum();
            let ds: f64 = (0..basis.len()).map(|i| basis.deriv(i, x)).sum();
            assert_near(s, 1.0, 1e-13);
            assert_near(ds, 0.0, 1e-12);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let basis = Lagrange::new(gauss_lobatto(2));
        let eps = 1e-6;
        for i in 0..basis.len() {
            for &x in &[-0.5, 0.0, 0.4, 1.0] {
                let fd = (basis.value(i, x + eps) - basis.value(i, x - eps)) / (2.0 * eps);
                assert_near(basis.deriv(i, x), fd, 1e-8);
            }
        }
    }
}
