//! Method table and the accuracy-versus-reduction sweep.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abstraction::{abstract_network, AbstractionConfig, CoefficientMethod, Selection, SemanticsSource, Target};
use crate::data_io::SweepRecord;
use crate::error::{Error, Result};
use crate::network::{accuracy, LabeledDataset, Network};
use crate::numerics::Vector;
use crate::refinement::Counterexample;
use crate::syntactic::{bisim_abstract, Representative};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    VarianceOp,
    VarianceLp,
    GreedyOp,
    GreedyLp,
    /// Variance selection and projection on incoming weights plus bias.
    SyntacticOp,
    Bisim,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::VarianceOp,
        Method::VarianceLp,
        Method::GreedyOp,
        Method::GreedyLp,
        Method::SyntacticOp,
        Method::Bisim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::VarianceOp => "variance-op",
            Method::VarianceLp => "variance-lp",
            Method::GreedyOp => "greedy-op",
            Method::GreedyLp => "greedy-lp",
            Method::SyntacticOp => "syntactic-op",
            Method::Bisim => "bisim",
        }
    }

    /// Linear-abstraction settings; `None` for the bisimulation baseline.
    pub fn config(self, rr: f64) -> Option<AbstractionConfig> {
        let (selection, coefficients, source) = match self {
            Method::VarianceOp => (Selection::Variance, CoefficientMethod::Orthogonal, SemanticsSource::Semantic),
            Method::VarianceLp => (Selection::Variance, CoefficientMethod::L1, SemanticsSource::Semantic),
            Method::GreedyOp => (Selection::Greedy, CoefficientMethod::Orthogonal, SemanticsSource::Semantic),
            Method::GreedyLp => (Selection::Greedy, CoefficientMethod::L1, SemanticsSource::Semantic),
            Method::SyntacticOp => (Selection::Variance, CoefficientMethod::Orthogonal, SemanticsSource::Syntactic),
            Method::Bisim => return None,
        };
        Some(AbstractionConfig {
            selection,
            coefficients,
            target: Target::ReductionRate(rr),
            source,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug)]
pub struct MethodRun {
    pub network: Network,
    pub reduction_rate: f64,
    pub wall_time_s: f64,
}

/// Reduces `net` with `method` at reduction rate `rr`; the timer covers
/// the reduction only.
pub fn run_method(net: &Network, io: &[Vector], method: Method, rr: f64) -> Result<MethodRun> {
    let started = Instant::now();
    let (network, reduction_rate) = match method.config(rr) {
        Some(config) => {
            let state = abstract_network(net, io, &config)?;
            let rate = state.reduction_rate();
            (state.current, rate)
        }
        None => {
            let r = bisim_abstract(net, rr, Representative::Lowest)?;
            (r.network, r.reduction_rate)
        }
    };
    Ok(MethodRun {
        network,
        reduction_rate,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// One record per `(method, rr)`, methods outermost. The reported rate is
/// the one achieved.
pub fn sweep(
    net: &Network,
    io: &[Vector],
    test: &LabeledDataset,
    methods: &[Method],
    rates: &[f64],
) -> Result<Vec<SweepRecord>> {
    let mut out = Vec::with_capacity(methods.len() * rates.len());
    for &method in methods {
        for &rr in rates {
            let run = run_method(net, io, method, rr)?;
            let acc = accuracy(&run.network, test)?;
            log::info!("{method} rr {rr}: accuracy {acc:.4} in {:.3}s", run.wall_time_s);
            out.push(SweepRecord {
                method: method.name().to_string(),
                reduction_rate: run.reduction_rate,
                accuracy: acc,
                wall_time_s: run.wall_time_s,
            });
        }
    }
    Ok(out)
}

/// First `limit` inputs of `data`, skipping the indices in `exclude`, on
/// which the abstraction and the original disagree.
pub fn counterexamples_outside(
    original: &Network,
    current: &Network,
    data: &LabeledDataset,
    exclude: &[usize],
    limit: usize,
) -> Result<Vec<Counterexample>> {
    let mut skip = vec![false; data.len()];
    for &i in exclude {
        if let Some(s) = skip.get_mut(i) {
            *s = true;
        }
    }
    let mut out = Vec::new();
    for (index, x) in data.inputs.iter().enumerate() {
        if out.len() == limit {
            break;
        }
        if skip[index] {
            continue;
        }
        let original_label = original.predict(x)?;
        let abstract_label = current.predict(x)?;
        if original_label != abstract_label {
            out.push(Counterexample {
                index,
                input: x.clone(),
                original_label,
                abstract_label,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::glorot_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("variance".parse::<Method>().is_err());
    }

    #[test]
    fn sweep_shape_and_zero_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = glorot_init(3, &[6, 5], 2, &mut rng).unwrap();
        let xs: Vec<Vector> = (0..20).map(|k| vec![k as f64 * 0.1, 1.0 - k as f64 * 0.05, 0.3]).collect();
        let labels = xs.iter().map(|x| net.predict(x).unwrap()).collect();
        let test = LabeledDataset::new(xs.clone(), labels).unwrap();
        let methods = [Method::VarianceOp, Method::GreedyLp, Method::Bisim];
        let recs = sweep(&net, &xs, &test, &methods, &[0.0, 0.5]).unwrap();
        assert_eq!(recs.len(), 6);
        assert_eq!(recs[0].accuracy, 1.0);
        assert_eq!(recs[1].method, "variance-op");
        assert!((recs[1].reduction_rate - 6.0 / 11.0).abs() < 1e-12);
        assert_eq!(recs[5].method, "bisim");
        assert!(recs[5].reduction_rate >= 0.5);
    }
}
