use rand::Rng;
use serde::{Deserialize, Serialize};

/// Index of a parameter tensor inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// `U(−1/√rows, 1/√rows)`, rows being the fan-in of `x · W`.
    FanIn,
    Zeros,
    Const(f64),
}

/// Named parameter tensors stored back to back in one flat vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng + ?Sized>(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init, rng: &mut R) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        let offset = self.values.len();
        match init {
            Init::FanIn => {
                let bound = 1.0 / (rows as f64).sqrt();
                self.values.extend((0..rows * cols).map(|_| rng.random_range(-bound..bound)));
            }
            Init::Zeros => self.values.extend(std::iter::repeat_n(0.0, rows * cols)),
            Init::Const(v) => self.values.extend(std::iter::repeat_n(v, rows * cols)),
        }
        self.entries.push(ParamEntry { name, rows, cols, offset });
        ParamId(self.entries.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Number of parameter tensors.
    pub fn count(&self) -> usize {
        self.entries.len()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn slice(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.values[e.offset..e.offset + e.len()]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        let range = e.offset..e.offset + e.len();
        &mut self.values[range]
    }

    /// Replaces all values; the layout must match.
    pub fn set_values(&mut self, values: Vec<f64>) -> Result<(), String> {
        if values.len() != self.values.len() {
            return Err(format!("expected {} parameters, got {}", self.values.len(), values.len()));
        }
        self.values = values;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
