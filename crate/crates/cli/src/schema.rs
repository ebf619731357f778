//! Validation of emitted files.

use std::path::{Path, PathBuf};

use anyhow::Result;

use cpomdp_core::ModelSpec;

use crate::commands::{ParetoFile, SimFile, SolutionFile, PARETO_SCHEMA, SIM_SCHEMA, SOLUTION_SCHEMA};
use crate::config::config_err;

/// Known CSV layouts: (name, fixed header prefix).
const CSV_LAYOUTS: &[(&str, &str)] = &[
    ("frontier", "h1,h2,cost,method,param,policy"),
    ("policy", "t,k,p["),
    ("simulation", "policy,mode,reps,seed,qaly,qaly_se,lbcmr,lbcmr_se,cost,cost_se"),
    ("deltas", "policy,baseline,qaly_gain,"),
    ("bounds", "grid,size,lb,ub,gap,exact,gap_min,gap_mean,gap_max,samples,seed"),
    ("sensitivity", "cell,screening,pt,costs,metric,value"),
    ("trace", "age,"),
    ("useful", "epoch,age,useful_pct"),
    ("grid", "k,pi_0"),
];

pub fn check_files(files: &[PathBuf]) -> Result<()> {
    let mut bad = 0;
    for f in files {
        match check(f) {
            Ok(kind) => println!("{}: ok ({kind})", f.display()),
            Err(e) => {
                bad += 1;
                println!("{}: {e:#}", f.display());
            }
        }
    }
    if bad > 0 {
        return Err(config_err(format!("{bad} file(s) failed the schema check")));
    }
    Ok(())
}

pub fn check(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read: {e}")))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => check_json(&text),
        Some("csv") => check_csv(&text),
        _ => Err(config_err("unknown file type (expected .json or .csv)")),
    }
}

fn check_json(text: &str) -> Result<String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| config_err(format!("not JSON: {e}")))?;
    let schema = v.get("schema").and_then(|s| s.as_str()).ok_or_else(|| config_err("missing \"schema\" field"))?.to_string();
    let typed = |r: std::result::Result<(), serde_json::Error>| r.map_err(|e| config_err(format!("{schema}: {e}")));
    match schema.as_str() {
        SOLUTION_SCHEMA => typed(serde_json::from_value::<SolutionFile>(v).map(drop))?,
        PARETO_SCHEMA => typed(serde_json::from_value::<ParetoFile>(v).map(drop))?,
        SIM_SCHEMA => typed(serde_json::from_value::<SimFile>(v).map(drop))?,
        cpomdp_core::model::SCHEMA => {
            let spec = ModelSpec::from_json(text).map_err(|e| config_err(e.to_string()))?;
            if let Some(first) = spec.validate().first() {
                return Err(config_err(format!("invalid model: {first}")));
            }
        }
        other => return Err(config_err(format!("unknown schema '{other}'"))),
    }
    Ok(schema)
}

fn check_csv(text: &str) -> Result<String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| config_err("empty file"))?;
    let (kind, _) = CSV_LAYOUTS
        .iter()
        .find(|(_, prefix)| header.starts_with(prefix))
        .ok_or_else(|| config_err(format!("unrecognized header '{header}'")))?;
    let width = header.split(',').count();
    for (i, line) in lines.enumerate() {
        let w = line.split(',').count();
        if w != width {
            return Err(config_err(format!("row {} has {w} columns, header has {width}", i + 2)));
        }
    }
    Ok(format!("{kind} csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layouts() {
        assert_eq!(check_csv("h1,h2,cost,method,param,policy\n1,2,3,epsilon,0.1,p.csv\n").unwrap(), "frontier csv");
        assert!(check_csv("h1,h2,cost,method,param,policy\n1,2\n").is_err());
        assert!(check_csv("what,is,this\n").is_err());
    }

    #[test]
    fn json_schemas() {
        assert!(check_json("{\"schema\": \"nope\"}").is_err());
        assert!(check_json("{}").is_err());
        assert!(check_json(&cpomdp_core::fixtures::default_spec().to_json()).is_ok());
        assert!(check_json("{\"schema\": \"cpomdp-solution/1\"}").is_err());
    }
}
