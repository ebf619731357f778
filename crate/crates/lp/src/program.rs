use crate::LpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConstraintId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub cmp: Comparison,
    pub rhs: f64,
}

/// A linear program with optional binary variables.
///
/// Objective coefficients are stored densely, one per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub sense: Sense,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<f64>,
    pub objective_offset: f64,
}

impl Default for Program {
    fn default() -> Self {
        Self::new(Sense::Maximize)
    }
}

impl Program {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
            objective_offset: 0.0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Adds a continuous variable with bounds `[lower, upper]`; use
    /// `f64::INFINITY` / `f64::NEG_INFINITY` for free sides.
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> VarId {
        self.push_var(Variable { name: name.into(), lower, upper, kind: VarKind::Continuous })
    }

    pub fn add_nonneg(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, f64::INFINITY)
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> VarId {
        self.push_var(Variable { name: name.into(), lower: 0.0, upper: 1.0, kind: VarKind::Binary })
    }

    fn push_var(&mut self, var: Variable) -> VarId {
        self.variables.push(var);
        self.objective.push(0.0);
        VarId(self.variables.len() - 1)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        cmp: Comparison,
        rhs: f64,
    ) -> ConstraintId {
        self.constraints.push(Constraint { name: name.into(), terms, cmp, rhs });
        ConstraintId(self.constraints.len() - 1)
    }

    pub fn set_objective_coef(&mut self, var: VarId, coef: f64) {
        self.objective[var.0] = coef;
    }

    /// Replaces the objective with the sparse expression `terms` (duplicates summed).
    pub fn set_objective(&mut self, sense: Sense, terms: &[(VarId, f64)], offset: f64) {
        self.sense = sense;
        self.objective.iter_mut().for_each(|c| *c = 0.0);
        for &(v, c) in terms {
            self.objective[v.0] += c;
        }
        self.objective_offset = offset;
    }

    pub fn has_integers(&self) -> bool {
        self.variables.iter().any(|v| v.kind == VarKind::Binary)
    }

    /// Evaluates the objective at `values`.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(values).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Largest absolute violation over constraints and bounds.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.terms.iter().map(|&(v, a)| a * values[v.0]).sum();
            let viol = match c.cmp {
                Comparison::Le => lhs - c.rhs,
                Comparison::Ge => c.rhs - lhs,
                Comparison::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for (v, x) in self.variables.iter().zip(values) {
            worst = worst.max(v.lower - x).max(x - v.upper);
        }
        worst
    }

    /// Structural checks: finite coefficients, in-range indices, sane bounds.
    pub fn check(&self) -> Result<(), LpError> {
        if self.objective.len() != self.variables.len() {
            return Err(LpError::Malformed("objective length differs from variable count".into()));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if v.lower.is_nan() || v.upper.is_nan() || v.lower > v.upper {
                return Err(LpError::Malformed(format!("variable {i} has invalid bounds")));
            }
        }
        for (i, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(LpError::Malformed(format!("objective coefficient {i} is not finite")));
            }
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(LpError::Malformed(format!("constraint {r} has non-finite rhs")));
            }
            for &(v, a) in &c.terms {
                if v.0 >= self.variables.len() {
                    return Err(LpError::Malformed(format!("constraint {r} references unknown variable {}", v.0)));
                }
                if !a.is_finite() {
                    return Err(LpError::Malformed(format!("constraint {r} has a non-finite coefficient")));
                }
            }
        }
        Ok(())
    }
}
