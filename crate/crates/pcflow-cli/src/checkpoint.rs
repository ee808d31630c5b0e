//! Binary checkpoints.
//!
//! Little-endian layout:
//! ```text
//! b"PCFLOWCK"  u32 version
//! u32 n  u32 N  u32 mode          grid header
//! f64 t  u32 variant  u32 count
//! count x { u32 name_len, name, u32 comps, comps*sites x (f64 re, f64 im) }
//! u32 crc32 of every preceding byte
//! ```
//! Sites run in row-major order over (x1, y1, x2, y2), last axis fastest.

use std::path::Path;
use std::sync::Arc;

use pcflow::fields::{FormField, MetricField, Tensor11};
use pcflow::flow::{FlowContext, FlowState, FlowVariant};
use pcflow::grid::{make_grid, ComplexTorusGrid, DerivativeMode};
use pcflow::C64;

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"PCFLOWCK";
pub const VERSION: u32 = 1;

fn variant_code(v: FlowVariant) -> u32 {
    match v {
        FlowVariant::Pcf => 0,
        FlowVariant::Normalized => 1,
        FlowVariant::AlphaReduced => 2,
    }
}

fn variant_from(c: u32) -> Option<FlowVariant> {
    match c {
        0 => Some(FlowVariant::Pcf),
        1 => Some(FlowVariant::Normalized),
        2 => Some(FlowVariant::AlphaReduced),
        _ => None,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn field(&mut self, name: &str, comps: &[Vec<C64>]) {
        self.u32(name.len() as u32);
        self.0.extend_from_slice(name.as_bytes());
        self.u32(comps.len() as u32);
        for c in comps {
            for z in c {
                self.f64(z.re);
                self.f64(z.im);
            }
        }
    }
}

/// Serialize a state to bytes.
pub fn encode(state: &FlowState) -> Vec<u8> {
    let grid = &state.g.grid;
    let ctx = &state.ctx;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(grid.n_complex() as u32);
    w.u32(grid.points_per_axis() as u32);
    w.u32(grid.mode().code());
    w.f64(state.t);
    w.u32(variant_code(ctx.variant));
    let mut fields: Vec<(&str, Vec<Vec<C64>>)> = vec![
        ("g", state.g.comps.clone()),
        ("background", ctx.background.comps.clone()),
        ("rho_bg", ctx.rho_bg.comps.clone()),
        ("omega0", ctx.omega0.comps.clone()),
    ];
    if let Some(p) = &ctx.psi {
        fields.push(("psi", p.comps.clone()));
    }
    if let Some(phi) = &state.phi {
        fields.push(("phi", vec![phi.iter().map(|&v| C64::new(v, 0.0)).collect()]));
    }
    if let Some(a) = &state.alpha {
        fields.push(("alpha", a.comps.clone()));
    }
    w.u32(fields.len() as u32);
    for (name, comps) in &fields {
        w.field(name, comps);
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn save(state: &FlowState, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode(state)).map_err(|e| CliError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CliError> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Checkpoint(msg.into())
}

fn tensor(grid: &ComplexTorusGrid, comps: Vec<Vec<C64>>, name: &str) -> Result<Tensor11, CliError> {
    let n = grid.n_complex();
    if comps.len() != n * n {
        return Err(bad(format!("field {name} has {} components, expected {}", comps.len(), n * n)));
    }
    let mut t = Tensor11::zeros(grid);
    t.comps = comps;
    Ok(t)
}

fn metric(grid: &ComplexTorusGrid, comps: Vec<Vec<C64>>, name: &str) -> Result<MetricField, CliError> {
    MetricField::new(tensor(grid, comps, name)?).map_err(|e| bad(format!("field {name}: {e}")))
}

/// Parse bytes back into a state, checking magic, version, CRC and shapes.
pub fn decode(buf: &[u8]) -> Result<FlowState, CliError> {
    if buf.len() < MAGIC.len() + 8 || &buf[..8] != MAGIC {
        return Err(bad("not a pcflow checkpoint (bad magic)"));
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let crc = crc32fast::hash(body);
    if crc != stored {
        return Err(bad(format!("CRC mismatch: stored {stored:08x}, computed {crc:08x}")));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let points = r.u32()? as usize;
    let mode = DerivativeMode::from_code(r.u32()?).ok_or_else(|| bad("unknown derivative mode"))?;
    let grid = make_grid(n, points, mode).map_err(|e| bad(e.to_string()))?;
    let t = r.f64()?;
    let variant = variant_from(r.u32()?).ok_or_else(|| bad("unknown flow variant"))?;
    let count = r.u32()?;
    let sites = grid.sites();
    let mut fields = std::collections::BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("field name is not UTF-8"))?;
        let nc = r.u32()? as usize;
        if nc > 16 {
            return Err(bad(format!("field {name} claims {nc} components")));
        }
        let mut comps = Vec::with_capacity(nc);
        for _ in 0..nc {
            let mut c = Vec::with_capacity(sites);
            for _ in 0..sites {
                let re = r.f64()?;
                let im = r.f64()?;
                c.push(C64::new(re, im));
            }
            comps.push(c);
        }
        if fields.insert(name.clone(), comps).is_some() {
            return Err(bad(format!("field {name} appears twice")));
        }
    }
    if r.pos != body.len() {
        return Err(bad(format!("{} trailing bytes before the CRC", body.len() - r.pos)));
    }
    let mut need = |k: &str| fields.remove(k).ok_or_else(|| bad(format!("missing field {k}")));
    let g = metric(&grid, need("g")?, "g")?;
    let background = metric(&grid, need("background")?, "background")?;
    let rho_bg = metric(&grid, need("rho_bg")?, "rho_bg")?;
    let omega0 = metric(&grid, need("omega0")?, "omega0")?;
    let psi = fields.remove("psi").map(|c| tensor(&grid, c, "psi")).transpose()?;
    let phi = match fields.remove("phi") {
        Some(c) if c.len() == 1 => Some(c[0].iter().map(|z| z.re).collect()),
        Some(_) => return Err(bad("field phi must have one component")),
        None => None,
    };
    let alpha = match fields.remove("alpha") {
        Some(c) if c.len() == n => {
            let mut a = FormField::zeros(&grid, 0, 1, true);
            a.comps = c;
            Some(a)
        }
        Some(_) => return Err(bad(format!("field alpha must have {n} components"))),
        None => None,
    };
    if let Some(k) = fields.keys().next() {
        return Err(bad(format!("unknown field {k}")));
    }
    if variant == FlowVariant::AlphaReduced && alpha.is_none() {
        return Err(bad("alpha_reduced checkpoint without alpha"));
    }
    let ctx = Arc::new(FlowContext::new(variant, background, psi, rho_bg, omega0));
    Ok(FlowState { t, g, phi, alpha, ctx })
}

pub fn load(path: &Path) -> Result<FlowState, CliError> {
    let buf = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pcflow::scenarios::{generate, ScenarioKind, ScenarioSpec};

    fn state(variant: FlowVariant) -> FlowState {
        let grid = make_grid(2, 8, DerivativeMode::Spectral).unwrap();
        let g = generate(&ScenarioSpec::new(ScenarioKind::PluriclosedAlpha), &grid).unwrap();
        let id = MetricField::identity(&grid);
        let ctx = Arc::new(FlowContext::new(variant, id.clone(), None, id, g.clone()));
        let mut s = FlowState::initial(g, ctx, true);
        s.t = 0.375;
        s.phi = Some((0..grid.sites()).map(|i| (i as f64).sin()).collect());
        s
    }

    #[test]
    fn round_trip_is_exact() {
        for v in [FlowVariant::Pcf, FlowVariant::AlphaReduced] {
            let s = state(v);
            let bytes = encode(&s);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.t, s.t);
            assert_eq!(back.ctx.variant, v);
            assert_eq!(back.g.max_diff(&s.g), 0.0);
            assert_eq!(back.phi, s.phi);
            assert_eq!(back.alpha.is_some(), v == FlowVariant::AlphaReduced);
            assert!(encode(&back) == bytes, "re-encoding changed bytes");
        }
    }

    #[test]
    fn header_layout() {
        let b = encode(&state(FlowVariant::Pcf));
        assert_eq!(&b[..8], b"PCFLOWCK");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 8);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 0);
        assert_eq!(f64::from_le_bytes(b[24..32].try_into().unwrap()), 0.375);
    }

    #[test]
    fn corruption_detected() {
        let mut b = encode(&state(FlowVariant::Pcf));
        let mid = b.len() / 2;
        b[mid] ^= 1;
        assert!(matches!(decode(&b), Err(CliError::Checkpoint(m)) if m.contains("CRC")));
        let b = encode(&state(FlowVariant::Pcf));
        assert!(decode(&b[..b.len() - 9]).is_err());
        assert!(decode(b"PCFLOWXX\0\0\0\0\0\0\0\0").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn arbitrary_scalars_round_trip(t in -1e6f64..1e6, seed in any::<u64>(), flip in 0usize..1000) {
                let mut s = state(FlowVariant::Normalized);
                s.t = t;
                let sites = s.g.grid.sites();
                s.phi = Some((0..sites).map(|i| ((i as u64).wrapping_mul(seed | 1) % 9973) as f64 * 1e-3 - 5.0).collect());
                let b = encode(&s);
                let back = decode(&b).unwrap();
                prop_assert_eq!(back.t.to_bits(), t.to_bits());
                prop_assert_eq!(&back.phi, &s.phi);
                // any single-bit flip is caught by the CRC or the header checks
                let mut c = b.clone();
                let at = flip * (c.len() - 1) / 999;
                c[at] ^= 0x10;
                prop_assert!(decode(&c).is_err());
            }
        }
    }
}
