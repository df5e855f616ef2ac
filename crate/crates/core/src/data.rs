//! Integer-coded household microdata.

use crate::error::DataError;
use crate::schema::Schema;

pub type Code = u16;

/// Cell code marking a missing value; real codes are 1-based.
pub const MISSING: Code = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Observed,
    Missing,
}

/// One household: size plus its flat cell vector (layout in [`crate::schema`]).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Household {
    pub id: String,
    pub size: usize,
    pub cells: Vec<Code>,
}

impl Household {
    /// Builds a household, checking cell count, code ranges and the size cell.
    pub fn new(
        schema: &Schema,
        id: impl Into<String>,
        size: usize,
        cells: Vec<Code>,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if !schema.size_allowed(size) {
            return Err(DataError::Invalid(format!(
                "household '{id}': size {size} is not allowed"
            )));
        }
        if cells.len() != schema.cell_count(size) {
            return Err(DataError::Invalid(format!(
                "household '{id}': expected {} cells, got {}",
                schema.cell_count(size),
                cells.len()
            )));
        }
        let expected = schema.size_code(size).unwrap();
        if cells[schema.size_cell()] != expected {
            return Err(DataError::Invalid(format!(
                "household '{id}': size cell holds code {} but the household has {size} people",
                cells[schema.size_cell()]
            )));
        }
        for (c, &code) in cells.iter().enumerate() {
            let var = cell_variable(schema, c);
            if code as usize > schema.variable(var).cardinality {
                return Err(DataError::UnknownCategory {
                    variable: schema.variable(var).name.clone(),
                    code: code as usize,
                });
            }
        }
        Ok(Household { id, size, cells })
    }

    pub fn members(&self, schema: &Schema) -> usize {
        schema.members_for_size(self.size)
    }

    /// Individual-level cells of member `j` (0-based).
    pub fn member<'a>(&'a self, schema: &Schema, j: usize) -> &'a [Code] {
        let start = schema.q() + j * schema.p();
        &self.cells[start..start + schema.p()]
    }

    pub fn status(&self, cell: usize) -> CellStatus {
        if self.cells[cell] == MISSING {
            CellStatus::Missing
        } else {
            CellStatus::Observed
        }
    }

    pub fn has_missing(&self) -> bool {
        self.cells.contains(&MISSING)
    }
}

/// Schema variable that owns flat cell `cell`.
pub fn cell_variable(schema: &Schema, cell: usize) -> usize {
    let q = schema.q();
    if cell < q {
        schema.household_vars()[cell]
    } else {
        schema.individual_vars()[(cell - q) % schema.p()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub households: Vec<Household>,
}

impl Dataset {
    pub fn new(households: Vec<Household>) -> Self {
        Dataset { households }
    }

    pub fn len(&self) -> usize {
        self.households.len()
    }

    pub fn is_empty(&self) -> bool {
        self.households.is_empty()
    }

    pub fn individuals(&self, schema: &Schema) -> usize {
        self.households.iter().map(|h| h.members(schema)).sum()
    }

    /// Household counts per allowed size, in schema size order.
    pub fn size_counts(&self, schema: &Schema) -> Vec<usize> {
        let mut counts = vec![0; schema.sizes().len()];
        for h in &self.households {
            counts[schema.size_code(h.size).unwrap() as usize - 1] += 1;
        }
        counts
    }

    pub fn missing_cells(&self) -> usize {
        self.households
            .iter()
            .map(|h| h.cells.iter().filter(|&&c| c == MISSING).count())
            .sum()
    }

    pub fn is_complete(&self) -> bool {
        self.households.iter().all(|h| !h.has_missing())
    }
}
