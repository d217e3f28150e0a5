use ndarray::{Array, ArrayView, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    Log1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Driver,
    Index,
    Positional,
    Target,
}

/// A named cube variable with its preprocessing transform.
///
/// The role is not part of the serialized form; a configuration assigns it
/// from the list the variable appears in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
    #[serde(skip)]
    pub role: Role,
}

impl VariableSpec {
    pub fn driver(name: impl Into<String>, transform: Transform) -> Self {
        VariableSpec {
            name: name.into(),
            transform,
            role: Role::Driver,
        }
    }

    pub fn index(name: impl Into<String>) -> Self {
        VariableSpec {
            name: name.into(),
            transform: Transform::Identity,
            role: Role::Index,
        }
    }
}

/// Applies the variable's transform elementwise. Missing values (NaN) pass
/// through untouched; a negative value under `log1p` is rejected.
pub fn transform_variable<D: Dimension>(
    values: ArrayView<'_, f32, D>,
    spec: &VariableSpec,
) -> Result<Array<f32, D>> {
    let mut out = values.to_owned();
    transform_in_place(&mut out, spec)?;
    Ok(out)
}

/// [`transform_variable`] without the copy. On error `values` is unchanged.
pub fn transform_in_place<D: Dimension>(
    values: &mut Array<f32, D>,
    spec: &VariableSpec,
) -> Result<()> {
    match spec.transform {
        Transform::Identity => Ok(()),
        Transform::Log1p => {
            if let Some(bad) = values.iter().find(|v| **v < 0.0) {
                return Err(Error::InputDomain(format!(
                    "log1p transform of {} got negative value {bad}",
                    spec.name
                )));
            }
            values.mapv_inplace(f32::ln_1p);
            Ok(())
        }
    }
}
