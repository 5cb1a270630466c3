use ppf_lab::pipeline::MethodId;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, RunConfig};

fn toml_of<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Config(e.to_string()))
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        // length prefix so part boundaries cannot shift
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Hash of everything that determines the dataset: the case file bytes,
/// the sampling section (including the run seed), and the solver section.
pub fn data_fingerprint(cfg: &RunConfig, case_bytes: &[u8]) -> Result<String, CliError> {
    Ok(digest(&[
        b"ppf-lab data 1",
        case_bytes,
        toml_of(&cfg.sampling)?.as_bytes(),
        toml_of(&cfg.solver)?.as_bytes(),
    ]))
}

/// Hash of the dataset fingerprint, the method's own training section and
/// the run seed. Changing one method's settings leaves the others current.
pub fn model_fingerprint(cfg: &RunConfig, data_fp: &str, method: MethodId) -> Result<String, CliError> {
    let section = match method {
        MethodId::M1 => String::new(),
        MethodId::M2 => toml_of(&cfg.training.m2)?,
        MethodId::M3 => toml_of(&cfg.training.m3)?,
        MethodId::M4 => toml_of(&cfg.training.m4)?,
    };
    Ok(digest(&[
        b"ppf-lab model 1",
        data_fp.as_bytes(),
        method.to_string().as_bytes(),
        section.as_bytes(),
        cfg.seed.to_string().as_bytes(),
    ]))
}

/// Hash of the model fingerprints and the evaluation section.
pub fn report_fingerprint(cfg: &RunConfig, models: &[(MethodId, String)]) -> Result<String, CliError> {
    let mut parts: Vec<Vec<u8>> = vec![b"ppf-lab report 1".to_vec(), toml_of(&cfg.evaluation)?.into_bytes()];
    for (m, fp) in models {
        parts.push(format!("{m}={fp}").into_bytes());
    }
    Ok(digest(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sensitive_to_each_input() {
        let cfg = RunConfig::default();
        let base = data_fingerprint(&cfg, b"case").unwrap();
        assert_eq!(base.len(), 64);
        assert_eq!(base, data_fingerprint(&cfg, b"case").unwrap());
        assert_ne!(base, data_fingerprint(&cfg, b"case ").unwrap());

        let mut other = cfg.clone();
        other.sampling.load_std_fraction = 0.05;
        assert_ne!(base, data_fingerprint(&other, b"case").unwrap());

        let m = model_fingerprint(&cfg, &base, MethodId::M4).unwrap();
        let mut retrained = cfg.clone();
        retrained.training.m4.alpha = 3.0;
        assert_ne!(m, model_fingerprint(&retrained, &base, MethodId::M4).unwrap());
        assert_eq!(
            model_fingerprint(&cfg, &base, MethodId::M2).unwrap(),
            model_fingerprint(&retrained, &base, MethodId::M2).unwrap()
        );
    }
}
