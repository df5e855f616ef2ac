//! Variable catalogue shared by every other module.
//!
//! A household is stored as a flat vector of category codes: the `q`
//! household-level cells in schema order, followed by one block of `p`
//! individual-level cells per member record. Codes are 1-based; `0` marks a
//! missing cell (see [`crate::data::MISSING`]).
//!
//! Two head layouts are supported. With [`HeadLayout::Household`] the
//! household head's own characteristics live in household-level variables
//! (declared with `head_of`) and the member records cover the `h - 1`
//! non-head residents. With [`HeadLayout::Member`] every resident, the head
//! included, has a member record and the head is member 1.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Household,
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadLayout {
    /// Head characteristics are household-level variables; members exclude the head.
    #[default]
    Household,
    /// The head is member record 1.
    Member,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub level: Level,
    pub cardinality: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    /// Admits `<`/`<=` comparisons and integer offsets in rules.
    #[serde(default, skip_serializing_if = "is_false")]
    pub ordered: bool,
    /// Numeric value carried by code 1 of an ordered variable.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub origin: i32,
    #[serde(default, skip_serializing_if = "is_false")]
    pub household_size: bool,
    /// For household-level variables: the individual variable whose head value this holds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_of: Option<String>,
}

fn is_false(b: &bool) -> bool {
    !*b
}
fn one() -> i32 {
    1
}
fn is_one(v: &i32) -> bool {
    *v == 1
}

impl Variable {
    pub fn new(name: &str, level: Level, cardinality: usize) -> Self {
        Variable {
            name: name.to_string(),
            level,
            cardinality,
            labels: None,
            ordered: false,
            origin: 1,
            household_size: false,
            head_of: None,
        }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        self.labels = Some(labels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn ordered(mut self, origin: i32) -> Self {
        self.ordered = true;
        self.origin = origin;
        self
    }

    pub fn size(mut self) -> Self {
        self.household_size = true;
        self
    }

    pub fn head_of(mut self, target: &str) -> Self {
        self.head_of = Some(target.to_string());
        self
    }

    /// Code for a label, if labels are declared.
    pub fn code_of_label(&self, label: &str) -> Option<u16> {
        self.labels
            .as_ref()?
            .iter()
            .position(|l| l == label)
            .map(|i| (i + 1) as u16)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaDocument {
    sizes: Vec<usize>,
    #[serde(default)]
    head: HeadLayout,
    #[serde(rename = "variable")]
    variables: Vec<Variable>,
}

/// Validated, immutable variable catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    variables: Vec<Variable>,
    sizes: Vec<usize>,
    head: HeadLayout,
    household: Vec<usize>,
    individual: Vec<usize>,
    position: Vec<usize>,
    size_var: usize,
    head_map: Vec<Option<usize>>,
}

impl Schema {
    pub fn new(
        variables: Vec<Variable>,
        mut sizes: Vec<usize>,
        head: HeadLayout,
    ) -> Result<Self, SchemaError> {
        let mut seen = HashSet::new();
        for v in &variables {
            if !seen.insert(v.name.as_str()) {
                return Err(SchemaError::DuplicateName(v.name.clone()));
            }
            // The size variable is pinned and never resampled, so one code is legal.
            if v.cardinality < 2 && !(v.household_size && v.cardinality == 1) {
                return Err(SchemaError::Cardinality {
                    name: v.name.clone(),
                    cardinality: v.cardinality,
                });
            }
            if v.cardinality > u16::MAX as usize {
                return Err(SchemaError::Cardinality {
                    name: v.name.clone(),
                    cardinality: v.cardinality,
                });
            }
            if let Some(labels) = &v.labels {
                if labels.len() != v.cardinality {
                    return Err(SchemaError::LabelCount {
                        name: v.name.clone(),
                        labels: labels.len(),
                        cardinality: v.cardinality,
                    });
                }
            }
        }

        let mut size_var = None;
        for (i, v) in variables.iter().enumerate() {
            if v.household_size {
                if v.level != Level::Household {
                    return Err(SchemaError::SizeVariableLevel);
                }
                if let Some(prev) = size_var {
                    let prev: &Variable = &variables[prev];
                    return Err(SchemaError::DuplicateSizeVariable(
                        prev.name.clone(),
                        v.name.clone(),
                    ));
                }
                size_var = Some(i);
            }
        }
        let size_var = size_var.ok_or(SchemaError::MissingSizeVariable)?;

        sizes.sort_unstable();
        let distinct = sizes.windows(2).all(|w| w[0] != w[1]);
        if sizes.is_empty() || !distinct || sizes[0] < 1 {
            return Err(SchemaError::InvalidSizes { sizes, min: 1 });
        }
        if variables[size_var].cardinality != sizes.len() {
            return Err(SchemaError::SizeCoverage {
                codes: variables[size_var].cardinality,
                sizes: sizes.len(),
            });
        }

        let mut household = Vec::new();
        let mut individual = Vec::new();
        let mut position = vec![0; variables.len()];
        for (i, v) in variables.iter().enumerate() {
            match v.level {
                Level::Household => {
                    position[i] = household.len();
                    household.push(i);
                }
                Level::Individual => {
                    position[i] = individual.len();
                    individual.push(i);
                }
            }
        }
        if household.is_empty() {
            return Err(SchemaError::EmptyLevel("household"));
        }
        if individual.is_empty() {
            return Err(SchemaError::EmptyLevel("individual"));
        }

        let mut head_map = vec![None; variables.len()];
        for (i, v) in variables.iter().enumerate() {
            if let Some(target) = &v.head_of {
                let t = variables
                    .iter()
                    .position(|w| &w.name == target)
                    .filter(|&t| {
                        let w = &variables[t];
                        v.level == Level::Household
                            && w.level == Level::Individual
                            && w.cardinality == v.cardinality
                    })
                    .ok_or_else(|| SchemaError::HeadTarget {
                        name: v.name.clone(),
                        target: target.clone(),
                    })?;
                head_map[t] = Some(i);
            }
        }

        Ok(Schema {
            variables,
            sizes,
            head,
            household,
            individual,
            position,
            size_var,
            head_map,
        })
    }

    /// Parses the TOML schema document described in the repository README.
    pub fn from_toml(text: &str) -> Result<Self, SchemaError> {
        let doc: SchemaDocument =
            toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        Schema::new(doc.variables, doc.sizes, doc.head)
    }

    pub fn to_toml(&self) -> String {
        let doc = SchemaDocument {
            sizes: self.sizes.clone(),
            head: self.head,
            variables: self.variables.clone(),
        };
        toml::to_string(&doc).expect("schema document serializes")
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn variable(&self, index: usize) -> &Variable {
        &self.variables[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head_layout(&self) -> HeadLayout {
        self.head
    }

    /// Number of individual-level variables.
    pub fn p(&self) -> usize {
        self.individual.len()
    }

    /// Number of household-level variables, household size included.
    pub fn q(&self) -> usize {
        self.household.len()
    }

    /// Schema indices of household-level variables in cell order.
    pub fn household_vars(&self) -> &[usize] {
        &self.household
    }

    /// Schema indices of individual-level variables in cell order.
    pub fn individual_vars(&self) -> &[usize] {
        &self.individual
    }

    /// Position of a variable within its level block.
    pub fn position(&self, var: usize) -> usize {
        self.position[var]
    }

    pub fn size_var(&self) -> usize {
        self.size_var
    }

    /// Household cell holding the size code.
    pub fn size_cell(&self) -> usize {
        self.position[self.size_var]
    }

    /// Household-level variable holding the head's value of individual variable `var`.
    pub fn head_variable(&self, var: usize) -> Option<usize> {
        self.head_map[var]
    }

    pub fn size_allowed(&self, size: usize) -> bool {
        self.sizes.binary_search(&size).is_ok()
    }

    pub fn size_code(&self, size: usize) -> Option<u16> {
        self.sizes.binary_search(&size).ok().map(|i| (i + 1) as u16)
    }

    pub fn size_of_code(&self, code: u16) -> usize {
        self.sizes[code as usize - 1]
    }

    /// Member records stored for a household of size `size`.
    pub fn members_for_size(&self, size: usize) -> usize {
        match self.head {
            HeadLayout::Household => size.saturating_sub(1),
            HeadLayout::Member => size,
        }
    }

    /// Total cells for a household of size `size`.
    pub fn cell_count(&self, size: usize) -> usize {
        self.q() + self.members_for_size(size) * self.p()
    }

    /// Numeric value of a code as seen by rule comparisons.
    pub fn value(&self, var: usize, code: u16) -> i32 {
        let v = &self.variables[var];
        if var == self.size_var {
            self.sizes[code as usize - 1] as i32
        } else if v.ordered {
            code as i32 - 1 + v.origin
        } else {
            code as i32
        }
    }

    /// Inverse of [`Schema::value`]; `None` when no code carries that value.
    pub fn code_for_value(&self, var: usize, value: i32) -> Option<u16> {
        let v = &self.variables[var];
        if var == self.size_var {
            return self.size_code(usize::try_from(value).ok()?);
        }
        let code = if v.ordered {
            value - v.origin + 1
        } else {
            value
        };
        (1..=v.cardinality as i32)
            .contains(&code)
            .then_some(code as u16)
    }

    /// Flat cell coordinate of `variable` (and member, 1-based, for individual variables).
    pub fn cell_index(
        &self,
        variable: &str,
        member: Option<usize>,
        size: usize,
    ) -> Result<usize, SchemaError> {
        let var = self
            .index_of(variable)
            .ok_or_else(|| SchemaError::UnknownVariable(variable.to_string()))?;
        if !self.size_allowed(size) {
            return Err(SchemaError::SizeNotAllowed(size));
        }
        match (self.variables[var].level, member) {
            (Level::Household, None) => Ok(self.position[var]),
            (Level::Household, Some(_)) => Err(SchemaError::MemberNotAllowed(variable.into())),
            (Level::Individual, None) => Err(SchemaError::MemberRequired(variable.into())),
            (Level::Individual, Some(j)) => {
                let members = self.members_for_size(size);
                if j == 0 || j > members {
                    return Err(SchemaError::MemberOutOfRange { index: j, members });
                }
                Ok(self.q() + (j - 1) * self.p() + self.position[var])
            }
        }
    }

    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        for v in &self.variables {
            let lvl = match v.level {
                Level::Household => 'h',
                Level::Individual => 'i',
            };
            s.push_str(&format!("{}:{}:{};", v.name, lvl, v.cardinality));
        }
        s.push_str(&format!("sizes={:?}", self.sizes));
        s
    }
}

const ACS_SCHEMA: &str = include_str!("../data/acs_schema.toml");

/// Bundled eleven-variable census-style schema (head characteristics at household level).
pub fn default_acs_schema() -> Schema {
    Schema::from_toml(ACS_SCHEMA).expect("bundled schema is valid")
}
