use anyhow::Result;
use clap::Args;
use psce::bounds::{kl_budget_for_probability, kl_budget_for_variance, predictive_lower_bound, variance_upper_bound};
use serde_json::json;

use crate::UsageError;

#[derive(Debug, Args)]
pub struct KlBudgetArgs {
    /// δ of a δ-safe counterfactual; the bound starts from 1 − δ.
    #[arg(long, conflicts_with = "p1")]
    pub delta: Option<f64>,
    /// Measured predictive probability before the update.
    #[arg(long)]
    pub p1: Option<f64>,
    /// Lowest acceptable post-update probability.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Predictive variance before the update.
    #[arg(long, conflicts_with_all = ["delta", "p1", "threshold"])]
    pub eps: Option<f64>,
    /// Largest acceptable post-update variance.
    #[arg(long, requires = "eps")]
    pub var_cap: Option<f64>,
    /// Print only the JSON line.
    #[arg(long)]
    pub json: bool,
}

fn probability(name: &str, v: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(UsageError(format!("--{name} {v} outside [0, 1]")).into())
    }
}

pub fn run(args: KlBudgetArgs) -> Result<()> {
    let (human, value) = match (args.delta, args.p1, args.threshold, args.eps, args.var_cap) {
        (d, p, Some(t), None, None) if d.is_some() != p.is_some() => {
            let t = probability("threshold", t)?;
            let p1 = match (d, p) {
                (Some(d), _) => 1.0 - probability("delta", d)?,
                (_, Some(p)) => probability("p1", p)?,
                _ => unreachable!(),
            };
            let budget = kl_budget_for_probability(p1, t);
            let back = predictive_lower_bound(p1, budget);
            (
                format!(
                    "kl budget {} (lower bound at the budget: {})",
                    short(budget),
                    short(back)
                ),
                json!({"kind": "probability", "p1": p1, "delta": d, "threshold": t, "budget": budget, "bound_at_budget": back}),
            )
        }
        (None, None, None, Some(eps), Some(cap)) => {
            if eps < 0.0 || cap < 0.0 {
                return Err(UsageError("--eps and --var-cap must be non-negative".into()).into());
            }
            let budget = kl_budget_for_variance(eps, cap);
            let back = variance_upper_bound(eps, budget);
            (
                format!(
                    "kl budget {} (variance bound at the budget: {})",
                    short(budget),
                    short(back)
                ),
                json!({"kind": "variance", "epsilon": eps, "cap": cap, "budget": budget, "bound_at_budget": back}),
            )
        }
        _ => return Err(UsageError("give --delta or --p1 with --threshold, or --eps with --var-cap".into()).into()),
    };
    if !args.json {
        println!("{human}");
    }
    println!("{value}");
    Ok(())
}

/// Twelve significant digits, so that float noise does not reach the terminal.
fn short(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}
