use crate::ndiff::{Jet, Var};

/// Parameter-free polar maps on the plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polar {
    /// `(r, phi) -> (r cos phi, r sin phi)`.
    RadiusAngle,
    /// `(phi, s) -> exp(s) (cos phi, sin phi)`: the unit circle is `s = 0`,
    /// so padding a 1-d angle with zero lands on it. The inverse returns
    /// angles in `(-pi/2, 3pi/2]`.
    AngleLogRadius,
}

impl Polar {
    pub fn apply(self, z: &Jet, inverse: bool) -> (Jet, Var) {
        let a = z.slice_cols(0, 1);
        let b = z.slice_cols(1, 2);
        match (self, inverse) {
            (Polar::RadiusAngle, false) => {
                let out = Jet::concat_cols(&[&a.mul(&b.cos()), &a.mul(&b.sin())]);
                // log |r|
                (out, a.val.square().ln().scale(0.5))
            }
            (Polar::RadiusAngle, true) => {
                let r2 = a.square().add(&b.square());
                let out = Jet::concat_cols(&[&r2.sqrt(), &b.atan2(&a)]);
                (out, r2.val.ln().scale(-0.5))
            }
            (Polar::AngleLogRadius, false) => {
                let r = b.exp();
                let out = Jet::concat_cols(&[&r.mul(&a.cos()), &r.mul(&a.sin())]);
                (out, b.val.scale(2.0))
            }
            (Polar::AngleLogRadius, true) => {
                let r2 = a.square().add(&b.square());
                let s = r2.ln().scale(0.5);
                let ld = s.val.scale(-2.0);
                let phi = a.neg().atan2(&b).offset(std::f64::consts::FRAC_PI_2);
                (Jet::concat_cols(&[&phi, &s]), ld)
            }
        }
    }
}
