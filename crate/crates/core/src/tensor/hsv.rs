//! Per-pixel saturation/hue adjustment through an RGB→HSV→RGB round trip,
//! with the exact 3×3 pixel Jacobian for the backward pass.
//!
//! The Jacobian comes from running the round trip on three-lane dual numbers
//! seeded with ∂/∂r, ∂/∂g, ∂/∂b. Branch choices (channel max/min, hue sector,
//! saturation clamp) are made on values, so the derivative is exact wherever
//! the map is differentiable.

/// Scalar with derivatives against the three input channels.
#[derive(Copy, Clone)]
struct D3 {
    v: f64,
    d: [f64; 3],
}

impl D3 {
    fn new(v: f64, lane: usize) -> Self {
        let mut d = [0.0; 3];
        d[lane] = 1.0;
        D3 { v, d }
    }

    fn constant(v: f64) -> Self {
        D3 { v, d: [0.0; 3] }
    }

    fn add(self, o: D3) -> D3 {
        D3 {
            v: self.v + o.v,
            d: [
                self.d[0] + o.d[0],
                self.d[1] + o.d[1],
                self.d[2] + o.d[2],
            ],
        }
    }

    fn sub(self, o: D3) -> D3 {
        D3 {
            v: self.v - o.v,
            d: [
                self.d[0] - o.d[0],
                self.d[1] - o.d[1],
                self.d[2] - o.d[2],
            ],
        }
    }

    fn mul(self, o: D3) -> D3 {
        D3 {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }

    fn div(self, o: D3) -> D3 {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        D3 {
            v: q,
            d: [
                (self.d[0] - q * o.d[0]) * inv,
                (self.d[1] - q * o.d[1]) * inv,
                (self.d[2] - q * o.d[2]) * inv,
            ],
        }
    }

    fn scale(self, s: f64) -> D3 {
        D3 {
            v: self.v * s,
            d: [self.d[0] * s, self.d[1] * s, self.d[2] * s],
        }
    }

    fn add_const(self, c: f64) -> D3 {
        D3 { v: self.v + c, ..self }
    }

    fn max(self, o: D3) -> D3 {
        if self.v >= o.v {
            self
        } else {
            o
        }
    }

    fn min(self, o: D3) -> D3 {
        if self.v <= o.v {
            self
        } else {
            o
        }
    }

    fn abs(self) -> D3 {
        if self.v >= 0.0 {
            self
        } else {
            self.scale(-1.0)
        }
    }

    /// Wrap into [0, m): derivative passes through (slope 1 a.e.).
    fn rem_euclid(self, m: f64) -> D3 {
        D3 {
            v: self.v.rem_euclid(m),
            ..self
        }
    }

    /// Clamp to [lo, hi] with zero derivative outside.
    fn clamp(self, lo: f64, hi: f64) -> D3 {
        if self.v < lo {
            D3::constant(lo)
        } else if self.v > hi {
            D3::constant(hi)
        } else {
            self
        }
    }
}

/// Applies saturation scale `alpha` and hue shift `theta` (fraction of a full
/// turn) to one RGB pixel. Returns the adjusted pixel and the Jacobian
/// `jac[out_channel][in_channel]`.
pub fn adjust_pixel(rgb: [f64; 3], alpha: f64, theta: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let r = D3::new(rgb[0], 0);
    let g = D3::new(rgb[1], 1);
    let b = D3::new(rgb[2], 2);

    let v = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let c = v.sub(mn);

    let s = if v.v > 0.0 { c.div(v) } else { D3::constant(0.0) };

    // Hue in [0,1): sector chosen by which channel holds the maximum.
    let h = if c.v > 0.0 {
        let sector = if v.v == r.v {
            g.sub(b).div(c).rem_euclid(6.0)
        } else if v.v == g.v {
            b.sub(r).div(c).add_const(2.0)
        } else {
            r.sub(g).div(c).add_const(4.0)
        };
        sector.scale(1.0 / 6.0)
    } else {
        D3::constant(0.0)
    };

    let h2 = h.add_const(theta).rem_euclid(1.0);
    let s2 = s.scale(alpha).clamp(0.0, 1.0);

    // HSV -> RGB.
    let chroma = v.mul(s2);
    let hh = h2.scale(6.0);
    let x = chroma.mul(
        D3::constant(1.0).sub(hh.rem_euclid(2.0).add_const(-1.0).abs()),
    );
    let m = v.sub(chroma);

    let zero = D3::constant(0.0);
    let sector = (hh.v.floor() as i64).clamp(0, 5);
    let (r2, g2, b2) = match sector {
        0 => (chroma, x, zero),
        1 => (x, chroma, zero),
        2 => (zero, chroma, x),
        3 => (zero, x, chroma),
        4 => (x, zero, chroma),
        _ => (chroma, zero, x),
    };
    let out = [r2.add(m), g2.add(m), b2.add(m)];

    (
        [out[0].v, out[1].v, out[2].v],
        [out[0].d, out[1].d, out[2].d],
    )
}
