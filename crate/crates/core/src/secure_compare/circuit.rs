use super::{CompareError, Result};

pub type WireId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Xor,
    And,
    Or,
    Not,
}

impl GateKind {
    pub fn eval(self, a: bool, b: bool) -> bool {
        match self {
            GateKind::Xor => a ^ b,
            GateKind::And => a & b,
            GateKind::Or => a | b,
            GateKind::Not => !a,
        }
    }
}

/// One gate. `Not` reads only `a`; its `b` repeats `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gate {
    pub kind: GateKind,
    pub a: WireId,
    pub b: WireId,
    pub out: WireId,
}

/// A Boolean circuit whose gates are listed in evaluation order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BooleanCircuit {
    n_wires: u32,
    garbler_inputs: Vec<WireId>,
    evaluator_inputs: Vec<WireId>,
    gates: Vec<Gate>,
    outputs: Vec<WireId>,
}

impl BooleanCircuit {
    /// Validates that every wire is assigned exactly once, every gate input is
    /// assigned before use, and every output is assigned.
    pub fn new(
        n_wires: u32,
        garbler_inputs: Vec<WireId>,
        evaluator_inputs: Vec<WireId>,
        gates: Vec<Gate>,
        outputs: Vec<WireId>,
    ) -> Result<Self> {
        let invalid = |msg: String| CompareError::InvalidCircuit(msg);
        let mut defined = vec![false; n_wires as usize];
        let define = |w: WireId, defined: &mut Vec<bool>| -> Result<()> {
            let slot = defined
                .get_mut(w as usize)
                .ok_or_else(|| invalid(format!("wire {w} out of range")))?;
            if *slot {
                return Err(invalid(format!("wire {w} assigned twice")));
            }
            *slot = true;
            Ok(())
        };
        for &w in garbler_inputs.iter().chain(&evaluator_inputs) {
            define(w, &mut defined)?;
        }
        for (i, g) in gates.iter().enumerate() {
            for w in [g.a, g.b] {
                if !defined.get(w as usize).copied().unwrap_or(false) {
                    return Err(invalid(format!("gate {i} reads wire {w} before it is set")));
                }
            }
            define(g.out, &mut defined)?;
        }
        if let Some(w) = outputs.iter().find(|&&w| !defined.get(w as usize).copied().unwrap_or(false)) {
            return Err(invalid(format!("output wire {w} is never set")));
        }
        Ok(Self {
            n_wires,
            garbler_inputs,
            evaluator_inputs,
            gates,
            outputs,
        })
    }

    pub fn n_wires(&self) -> u32 {
        self.n_wires
    }

    pub fn garbler_inputs(&self) -> &[WireId] {
        &self.garbler_inputs
    }

    pub fn evaluator_inputs(&self) -> &[WireId] {
        &self.evaluator_inputs
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn outputs(&self) -> &[WireId] {
        &self.outputs
    }

    /// Number of gates that need a garbled table (all but `Not`).
    pub fn table_count(&self) -> usize {
        self.gates.iter().filter(|g| g.kind != GateKind::Not).count()
    }

    /// Evaluates on cleartext bits.
    pub fn eval_plain(&self, garbler: &[bool], evaluator: &[bool]) -> Result<Vec<bool>> {
        check_len(self.garbler_inputs.len(), garbler.len())?;
        check_len(self.evaluator_inputs.len(), evaluator.len())?;
        let mut wires = vec![false; self.n_wires as usize];
        for (&w, &v) in self.garbler_inputs.iter().zip(garbler) {
            wires[w as usize] = v;
        }
        for (&w, &v) in self.evaluator_inputs.iter().zip(evaluator) {
            wires[w as usize] = v;
        }
        for g in &self.gates {
            wires[g.out as usize] = g.kind.eval(wires[g.a as usize], wires[g.b as usize]);
        }
        Ok(self.outputs.iter().map(|&w| wires[w as usize]).collect())
    }
}

pub(super) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(CompareError::InputLengthMismatch { expected, found })
    }
}

/// `[x = y]` for two `width`-bit inputs: bitwise XOR, an OR-reduction tree
/// over the differences, and a final NOT. Garbler bits are wires
/// `0..width`, evaluator bits `width..2·width`, both least significant first.
pub fn build_equality_circuit(width: u32) -> Result<BooleanCircuit> {
    if !(1..=128).contains(&width) {
        return Err(CompareError::WidthOutOfRange(width));
    }
    let garbler: Vec<WireId> = (0..width).collect();
    let evaluator: Vec<WireId> = (width..2 * width).collect();
    let mut next = 2 * width;
    let mut gates = Vec::with_capacity(2 * width as usize);
    let mut gate = |kind, a, b, gates: &mut Vec<Gate>| {
        let out = next;
        next += 1;
        gates.push(Gate { kind, a, b, out });
        out
    };

    let mut layer: Vec<WireId> = (0..width)
        .map(|i| gate(GateKind::Xor, garbler[i as usize], evaluator[i as usize], &mut gates))
        .collect();
    while layer.len() > 1 {
        let mut reduced = Vec::with_capacity(layer.len().div_ceil(2));
        for pair in layer.chunks(2) {
            match *pair {
                [a, b] => reduced.push(gate(GateKind::Or, a, b, &mut gates)),
                [a] => reduced.push(a),
                _ => unreachable!(),
            }
        }
        layer = reduced;
    }
    let out = gate(GateKind::Not, layer[0], layer[0], &mut gates);
    BooleanCircuit::new(next, garbler, evaluator, gates, vec![out])
}

/// Low `width` bits of `value`, least significant first.
pub fn to_bits(value: u128, width: u32) -> Vec<bool> {
    (0..width).map(|i| (value >> i) & 1 == 1).collect()
}

pub fn from_bits(bits: &[bool]) -> u128 {
    bits.iter()
        .enumerate()
        .fold(0u128, |acc, (i, &b)| acc | (u128::from(b) << i))
}
