use std::fmt;
use std::str::FromStr;

use super::SimError;
use crate::rng::SplitMix64;

pub const MIN_ARRAY_LEN: u64 = 1 << 7;
pub const MAX_ARRAY_LEN: u64 = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    /// Cyclic walk over every page of the array.
    Sweep,
    /// Uniformly random page of the array on each access.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub array_len_elems: u64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    Sweep,
    Random,
    /// Phases run in order and repeat until the workload duration ends.
    Phased { phases: Vec<Phase>, kind: AccessKind },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub array_len_elems: u64,
    pub elem_bytes: u64,
    pub page_size: u64,
    pub access_rate_hz: f64,
    pub pattern: Pattern,
    pub duration_s: f64,
    pub seed: u64,
    /// Permit array lengths outside [2^7, 2^22].
    pub allow_out_of_range: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            array_len_elems: 1 << 12,
            elem_bytes: 4,
            page_size: 4096,
            access_rate_hz: 100_000.0,
            pattern: Pattern::Sweep,
            duration_s: 1.0,
            seed: 0,
            allow_out_of_range: false,
        }
    }
}

impl WorkloadSpec {
    /// Pages spanned by an array of `len` elements.
    pub fn footprint_for(&self, len: u64) -> u64 {
        (len * self.elem_bytes).div_ceil(self.page_size)
    }

    pub fn footprint_pages(&self) -> u64 {
        self.footprint_for(self.array_len_elems)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.elem_bytes == 0 || self.page_size == 0 {
            return bad("elem_bytes and page_size must be positive".into());
        }
        if !(self.access_rate_hz.is_finite() && self.access_rate_hz >= 0.0) {
            return bad(format!("access_rate_hz {} invalid", self.access_rate_hz));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return bad(format!("duration_s {} invalid", self.duration_s));
        }
        let mut lens = vec![self.array_len_elems];
        if let Pattern::Phased { phases, .. } = &self.pattern {
            if phases.is_empty() {
                return bad("phased pattern needs at least one phase".into());
            }
            for p in phases {
                if !(p.duration_s.is_finite() && p.duration_s > 0.0) {
                    return bad(format!("phase duration {} must be positive", p.duration_s));
                }
                lens.push(p.array_len_elems);
            }
        }
        for len in lens {
            if len == 0 {
                return bad("array length must be positive".into());
            }
            if !self.allow_out_of_range && !(MIN_ARRAY_LEN..=MAX_ARRAY_LEN).contains(&len) {
                return bad(format!(
                    "array length {len} outside [{MIN_ARRAY_LEN}, {MAX_ARRAY_LEN}]"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub t_ns: u64,
    pub page: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub accesses: Vec<Access>,
    pub page_size: u64,
}

impl AccessTrace {
    pub fn new(accesses: Vec<Access>, page_size: u64) -> Result<Self, SimError> {
        if accesses.windows(2).any(|w| w[1].t_ns < w[0].t_ns) {
            return Err(SimError::InvalidSpec("trace timestamps must be non-decreasing".into()));
        }
        Ok(Self { accesses, page_size })
    }

    pub fn footprint(&self) -> u64 {
        let mut pages: Vec<u64> = self.accesses.iter().map(|a| a.page).collect();
        pages.sort_unstable();
        pages.dedup();
        pages.len() as u64
    }
}

/// Deterministic trace for `spec`: access `k` happens at
/// `round(k * 1e9 / rate)` ns.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<AccessTrace, SimError> {
    spec.validate()?;
    if spec.access_rate_hz == 0.0 || spec.duration_s == 0.0 {
        return Err(SimError::EmptyTrace);
    }
    let n = (spec.duration_s * spec.access_rate_hz).floor() as u64;
    if n == 0 {
        return Err(SimError::EmptyTrace);
    }
    let period_ns = 1e9 / spec.access_rate_hz;
    let time_of = |k: u64| (k as f64 * period_ns).round() as u64;
    let mut rng = SplitMix64::new(spec.seed);
    let mut accesses = Vec::with_capacity(n as usize);

    match &spec.pattern {
        Pattern::Sweep | Pattern::Random => {
            let fp = spec.footprint_pages();
            for k in 0..n {
                let page = if spec.pattern == Pattern::Sweep {
                    k % fp
                } else {
                    rng.below(fp)
                };
                accesses.push(Access { t_ns: time_of(k), page });
            }
        }
        Pattern::Phased { phases, kind } => {
            let phase_ns: Vec<u64> = phases.iter().map(|p| (p.duration_s * 1e9).round() as u64).collect();
            let cycle_ns: u64 = phase_ns.iter().sum();
            let mut current = usize::MAX;
            let mut step = 0u64;
            for k in 0..n {
                let t = time_of(k);
                let mut within = t % cycle_ns;
                let mut idx = 0;
                while within >= phase_ns[idx] {
                    within -= phase_ns[idx];
                    idx += 1;
                }
                if idx != current {
                    current = idx;
                    step = 0;
                }
                let fp = spec.footprint_for(phases[idx].array_len_elems);
                let page = match kind {
                    AccessKind::Sweep => step % fp,
                    AccessKind::Random => rng.below(fp),
                };
                step += 1;
                accesses.push(Access { t_ns: t, page });
            }
        }
    }
    AccessTrace::new(accesses, spec.page_size)
}

impl fmt::Display for AccessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccessKind::Sweep => "sweep",
            AccessKind::Random => "random",
        })
    }
}

impl FromStr for AccessKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "sweep" => Ok(Self::Sweep),
            "random" => Ok(Self::Random),
            other => Err(SimError::InvalidSpec(format!("unknown access kind {other:?}"))),
        }
    }
}

/// `len:duration` pairs separated by commas, e.g. `128:0.5, 4096:1`.
pub fn parse_phases(text: &str) -> Result<Vec<Phase>, SimError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (len, dur) = item
                .split_once(':')
                .ok_or_else(|| SimError::InvalidSpec(format!("phase {item:?} is not len:duration")))?;
            Ok(Phase {
                array_len_elems: len
                    .trim()
                    .parse()
                    .map_err(|_| SimError::InvalidSpec(format!("bad phase length {len:?}")))?,
                duration_s: dur
                    .trim()
                    .parse()
                    .map_err(|_| SimError::InvalidSpec(format!("bad phase duration {dur:?}")))?,
            })
        })
        .collect()
}

pub fn format_phases(phases: &[Phase]) -> String {
    phases
        .iter()
        .map(|p| format!("{}:{}", p.array_len_elems, p.duration_s))
        .collect::<Vec<_>>()
        .join(",")
}
