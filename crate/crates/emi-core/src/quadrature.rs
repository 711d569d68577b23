//! Quadrature rules on the reference interval [0,1] and the reference
//! triangle {(x,y) : x,y >= 0, x + y <= 1}.

/// Gauss-Legendre rule on [0,1], exact for polynomials of degree 2n-1.
#[derive(Debug, Clone)]
pub struct LineRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Rule on the reference triangle, exact up to the stated total degree.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Legendre polynomial value and derivative at x (on [-1,1]).
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on [-1,1] by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi-style initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_pair(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        xs[n - 1 - i] = x;
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        xs[n / 2] = 0.0;
        let (_, dp) = legendre_pair(n, 0.0);
        ws[n / 2] = 2.0 / (dp * dp);
    }
    (xs, ws)
}

impl LineRule {
    /// Rule with `n` points on [0,1].
    pub fn with_points(n: usize) -> Self {
        let (xs, ws) = gauss_legendre(n);
        LineRule {
            points: xs.iter().map(|x| 0.5 * (x + 1.0)).collect(),
            weights: ws.iter().map(|w| 0.5 * w).collect(),
        }
    }

    /// Smallest rule exact for polynomials of the given degree.
    pub fn for_degree(degree: usize) -> Self {
        Self::with_points(degree / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

impl TriangleRule {
    /// Collapsed tensor-product rule exact for the given total degree.
    ///
    /// Maps the unit square by (a,b) -> (a(1-b), b); the factor (1-b) is
    /// absorbed into the weights, so a polynomial of total degree d needs a
    /// degree d+1 factor in b, covered by ceil((d+2)/2) points per axis.
    pub fn for_degree(degree: usize) -> Self {
        let n = (degree + 2).div_ceil(2);
        let (xs, ws) = gauss_legendre(n);
        let a: Vec<f64> = xs.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let wa: Vec<f64> = ws.iter().map(|w| 0.5 * w).collect();
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for q in 0..n {
            for p in 0..n {
                let b = a[q];
                points.push([a[p] * (1.0 - b), b]);
                weights.push(wa[p] * wa[q] * (1.0 - b));
            }
        }
        TriangleRule {
            points,
            weights,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: FnMut(f64, f64) -> f64>(&self, mut f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, &w)| w * f(p[0], p[1]))
            .sum()
    }
}

/// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
pub fn monomial_integral(a: usize, b: usize) -> f64 {
    let mut val = 1.0;
    // a! b! / (a+b+2)! computed as a product of ratios to stay in range.
    for k in 1..=(a + b + 2) {
        val /= k as f64;
    }
    for k in 1..=a {
        val *= k as f64;
    }
    for k in 1..=b {
        val *= k as f64;
    }
    val
}
