//! Operator overloads and elementary functions on [`Var`].

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Var;

impl<'t> Var<'t> {
    pub fn exp(self) -> Var<'t> {
        let e = self.value().exp();
        self.tape.unary(self, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value();
        self.tape.unary(self, x.ln(), 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'t> {
        let s = self.value().sqrt();
        self.tape.unary(self, s, 0.5 / s)
    }

    pub fn sin(self) -> Var<'t> {
        let x = self.value();
        self.tape.unary(self, x.sin(), x.cos())
    }

    pub fn cos(self) -> Var<'t> {
        let x = self.value();
        self.tape.unary(self, x.cos(), -x.sin())
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let x = self.value();
        let d = if n == 0 { 0.0 } else { n as f64 * x.powi(n - 1) };
        self.tape.unary(self, x.powi(n), d)
    }

    pub fn square(self) -> Var<'t> {
        let x = self.value();
        self.tape.unary(self, x * x, 2.0 * x)
    }

    pub fn recip(self) -> Var<'t> {
        let x = self.value();
        self.tape.unary(self, 1.0 / x, -1.0 / (x * x))
    }

    /// log(1 + e^x), stable for large |x|.
    pub fn softplus(self) -> Var<'t> {
        let x = self.value();
        let v = if x > 30.0 { x } else { x.exp().ln_1p() };
        let d = 1.0 / (1.0 + (-x).exp());
        self.tape.unary(self, v, d)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self, 1.0, rhs, 1.0, self.value() + rhs.value())
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self, 1.0, rhs, -1.0, self.value() - rhs.value())
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape.binary(self, b, rhs, a, a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let (a, b) = (self.value(), rhs.value());
        self.tape.binary(self, 1.0 / b, rhs, -a / (b * b), a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self, -self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value() + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value() - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value() * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self, self.value() / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.unary(rhs, self - rhs.value(), -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let b = rhs.value();
        rhs.tape.unary(rhs, self / b, -self / (b * b))
    }
}
