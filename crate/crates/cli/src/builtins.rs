//! Catalog of the built-in kernels, fields and initial data, with the
//! parameters each one takes in a scenario file.

use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Param {
    pub name: &'static str,
    pub meaning: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Builtin {
    pub category: &'static str,
    pub name: &'static str,
    /// Where the entry goes in a scenario; `kind` selects it.
    pub table: &'static str,
    pub formula: &'static str,
    pub params: Vec<Param>,
}

fn p(name: &'static str, meaning: &'static str) -> Param {
    Param { name, meaning }
}

fn entry(
    category: &'static str,
    name: &'static str,
    table: &'static str,
    formula: &'static str,
    params: Vec<Param>,
) -> Builtin {
    Builtin {
        category,
        name,
        table,
        formula,
        params,
    }
}

pub fn catalog() -> Vec<Builtin> {
    const DAUGHTERS: &str = "kernels.daughters.law";
    const RATE: &str = "kernels.rate.law";
    const COAG: &str = "kernels.coagulation.law";
    const VELOCITY: &str = "transport.field";
    const DIFFUSION: &str = "transport.coeff.law";
    const INITIAL: &str = "initial";
    vec![
        entry("daughter kernel", "uniform-binary", DAUGHTERS, "b(m,s) = 2/s", vec![]),
        entry(
            "daughter kernel",
            "homogeneous",
            DAUGHTERS,
            "b(m,s) = h(m/s)/s",
            vec![p("profile", "h(z) on [0,1]: {kind = constant|power|table, ...}")],
        ),
        entry(
            "daughter kernel",
            "power-law",
            DAUGHTERS,
            "b(m,s) = (nu+2) m^nu / s^(nu+1)",
            vec![p("nu", "exponent, nu > -1")],
        ),
        entry(
            "daughter kernel",
            "example-3.1",
            DAUGHTERS,
            "s >= 2: 2s(1-b2)+b2 on m <= 1, b2 on s-1 <= m <= s; 2/s for s < 2",
            vec![p("b2", "weight near the parent mass; lim c_r(s) = b2")],
        ),
        entry(
            "daughter kernel",
            "scaled",
            DAUGHTERS,
            "factor * inner",
            vec![p("factor", "multiplier >= 0"), p("inner", "another daughter law")],
        ),
        entry("rate", "constant", RATE, "a(m) = value", vec![p("value", "rate (1/time)")]),
        entry(
            "rate",
            "power",
            RATE,
            "a(m) = coef m^exponent",
            vec![p("coef", "a0 (1/time)"), p("exponent", "gamma")],
        ),
        entry(
            "rate",
            "table",
            RATE,
            "piecewise linear in m",
            vec![p("m", "abscissae"), p("values", "rates (1/time)")],
        ),
        entry("coagulation kernel", "constant-k", COAG, "k(m,s) = k0", vec![p("k0", "rate (volume/time)")]),
        entry("coagulation kernel", "sum", COAG, "k(m,s) = m + s", vec![]),
        entry(
            "coagulation kernel",
            "product-bounded",
            COAG,
            "k(m,s) = k0 (1+m^q)(1+s^q)",
            vec![p("k0", "rate (volume/time)"), p("q", "growth exponent, q < gamma")],
        ),
        entry(
            "coagulation kernel",
            "table",
            COAG,
            "bilinear in a symmetric n x n table",
            vec![p("m", "abscissae"), p("values", "row-major n x n")],
        ),
        entry("velocity field", "zero", VELOCITY, "0", vec![]),
        entry("velocity field", "constant", VELOCITY, "c", vec![p("c", "[c1, c2] (length/time)")]),
        entry("velocity field", "rotation", VELOCITY, "omega (-x2, x1)", vec![p("omega", "angular rate (1/time)")]),
        entry("velocity field", "shear", VELOCITY, "(rate x2, 0)", vec![p("rate", "shear rate (1/time)")]),
        entry("velocity field", "linear", VELOCITY, "rate x", vec![p("rate", "1/time; not divergence free")]),
        entry(
            "velocity field",
            "mass-dependent",
            VELOCITY,
            "c (1 + slope m)",
            vec![p("c", "[c1, c2] (length/time)"), p("slope", "1/mass")],
        ),
        entry("diffusivity", "constant", DIFFUSION, "d", vec![p("d", "length^2/time")]),
        entry(
            "diffusivity",
            "power-law",
            DIFFUSION,
            "d0 (1+m)^(-p)",
            vec![p("d0", "length^2/time"), p("p", "exponent")],
        ),
        entry(
            "diffusivity",
            "table",
            DIFFUSION,
            "piecewise linear in m",
            vec![p("m", "abscissae"), p("values", "length^2/time")],
        ),
        entry("initial datum", "zero", INITIAL, "0", vec![]),
        entry(
            "initial datum",
            "exponential",
            INITIAL,
            "amplitude e^(-rate m) profile(x)",
            vec![
                p("amplitude", "default 1"),
                p("rate", "1/mass, default 1"),
                p("profile", "{kind = uniform} or {kind = gaussian, center, width}"),
            ],
        ),
        entry(
            "initial datum",
            "gaussian",
            INITIAL,
            "amplitude exp(-|x-center|^2/(2 width^2)) e^(-mass_rate m)",
            vec![
                p("amplitude", "default 1"),
                p("center", "position"),
                p("width", "length"),
                p("mass_rate", "1/mass, default 1"),
            ],
        ),
        entry(
            "initial datum",
            "power-tail",
            INITIAL,
            "amplitude (1+m)^(-exponent) profile(x)",
            vec![p("amplitude", "default 1"), p("exponent", "tail exponent"), p("profile", "as for exponential")],
        ),
        entry(
            "initial datum",
            "tabulated",
            INITIAL,
            "piecewise linear in m, zero outside",
            vec![p("m", "abscissae"), p("values", "densities"), p("profile", "as for exponential")],
        ),
    ]
}

pub fn render_text(items: &[Builtin]) -> String {
    let mut out = String::new();
    let mut category = "";
    for b in items {
        if b.category != category {
            category = b.category;
            out.push_str(&format!("{category} ({}):\n", b.table));
        }
        out.push_str(&format!("  {:<16} {}\n", b.name, b.formula));
        for p in &b.params {
            out.push_str(&format!("      {:<10} {}\n", p.name, p.meaning));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_within_a_category() {
        let c = catalog();
        for (i, a) in c.iter().enumerate() {
            assert!(!c[i + 1..].iter().any(|b| b.category == a.category && b.name == a.name));
        }
    }
}
