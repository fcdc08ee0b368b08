//! Quadrature rules on triangles and edges.

/// Degree-4 six-point rule on triangles: (barycentric coordinates, weight).
/// Weights sum to one and multiply the triangle area.
pub const TRIANGLE_6: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445948490915965;
    const WA: f64 = 0.223381589678011;
    const B: f64 = 0.091576213509771;
    const WB: f64 = 0.109951743655322;
    [
        ([A, A, 1.0 - 2.0 * A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([1.0 - 2.0 * A, A, A], WA),
        ([B, B, 1.0 - 2.0 * B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([1.0 - 2.0 * B, B, B], WB),
    ]
};

/// Three-point Gauss–Legendre rule on [-1, 1]: (abscissa, weight).
pub const GAUSS_3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];
