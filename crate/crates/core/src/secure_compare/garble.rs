//! Point-and-permute garbling with four-row tables.
//!
//! Each wire gets two random 128-bit labels whose low bits (the permute bits)
//! differ. A table row is addressed by the permute bits of the two input
//! labels and holds the output label masked with `H(label_a, label_b, gate)`.
//! `Not` gates are free: the output labels are the input labels swapped.

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::circuit::{check_len, BooleanCircuit, GateKind};
use super::{CompareError, Result};

pub const LABEL_BYTES: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireLabel(pub [u8; LABEL_BYTES]);

impl std::fmt::Debug for WireLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WireLabel(")?;
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "…)")
    }
}

impl WireLabel {
    pub fn permute_bit(&self) -> bool {
        self.0[LABEL_BYTES - 1] & 1 == 1
    }

    fn xor(&self, mask: &[u8; LABEL_BYTES]) -> WireLabel {
        let mut out = self.0;
        out.iter_mut().zip(mask).for_each(|(o, m)| *o ^= m);
        WireLabel(out)
    }

    fn random<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; LABEL_BYTES];
        rng.fill_bytes(&mut bytes);
        WireLabel(bytes)
    }

    /// A fresh label pair for one wire with opposite permute bits.
    fn pair<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> [WireLabel; 2] {
        let zero = WireLabel::random(rng);
        let mut one = WireLabel::random(rng);
        one.0[LABEL_BYTES - 1] = (one.0[LABEL_BYTES - 1] & !1) | u8::from(!zero.permute_bit());
        [zero, one]
    }
}

/// Four masked output labels, row `2·perm(a) + perm(b)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GarbledTable(pub [[u8; LABEL_BYTES]; 4]);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GarbledCircuit {
    /// One table per non-`Not` gate, in gate order.
    pub tables: Vec<GarbledTable>,
    /// The garbler's own input, one label per garbler input wire.
    pub garbler_labels: Vec<WireLabel>,
    /// Per output wire, digests of the labels meaning 0 and 1.
    pub output_decoding: Vec<[[u8; LABEL_BYTES]; 2]>,
}

fn row_key(a: &WireLabel, b: &WireLabel, gate: usize) -> [u8; LABEL_BYTES] {
    let digest = Sha256::new()
        .chain_update(b"snpvault/gc/row")
        .chain_update(a.0)
        .chain_update(b.0)
        .chain_update((gate as u64).to_be_bytes())
        .finalize();
    digest[..LABEL_BYTES].try_into().expect("digest is 32 bytes")
}

fn output_digest(label: &WireLabel, output: usize) -> [u8; LABEL_BYTES] {
    let digest = Sha256::new()
        .chain_update(b"snpvault/gc/out")
        .chain_update(label.0)
        .chain_update((output as u64).to_be_bytes())
        .finalize();
    digest[..LABEL_BYTES].try_into().expect("digest is 32 bytes")
}

/// Garbles `circuit` with fresh labels and resolves the garbler's inputs.
/// Returns the circuit to send and the label pairs for the evaluator's wires,
/// which the garbler offers through oblivious transfer.
pub fn garble<R: RngCore + CryptoRng + ?Sized>(
    circuit: &BooleanCircuit,
    garbler_input: &[bool],
    rng: &mut R,
) -> Result<(GarbledCircuit, Vec<[WireLabel; 2]>)> {
    check_len(circuit.garbler_inputs().len(), garbler_input.len())?;
    let mut labels: Vec<Option<[WireLabel; 2]>> = vec![None; circuit.n_wires() as usize];
    for &w in circuit.garbler_inputs().iter().chain(circuit.evaluator_inputs()) {
        labels[w as usize] = Some(WireLabel::pair(rng));
    }

    let mut tables = Vec::with_capacity(circuit.table_count());
    for (index, gate) in circuit.gates().iter().enumerate() {
        let a = labels[gate.a as usize].expect("validated circuit");
        if gate.kind == GateKind::Not {
            labels[gate.out as usize] = Some([a[1], a[0]]);
            continue;
        }
        let b = labels[gate.b as usize].expect("validated circuit");
        let out = WireLabel::pair(rng);
        let mut rows = [[0u8; LABEL_BYTES]; 4];
        for va in [false, true] {
            for vb in [false, true] {
                let (la, lb) = (&a[usize::from(va)], &b[usize::from(vb)]);
                let row = 2 * usize::from(la.permute_bit()) + usize::from(lb.permute_bit());
                let value = gate.kind.eval(va, vb);
                rows[row] = out[usize::from(value)].xor(&row_key(la, lb, index)).0;
            }
        }
        tables.push(GarbledTable(rows));
        labels[gate.out as usize] = Some(out);
    }

    let garbler_labels = circuit
        .garbler_inputs()
        .iter()
        .zip(garbler_input)
        .map(|(&w, &bit)| labels[w as usize].expect("input wire")[usize::from(bit)])
        .collect();
    let output_decoding = circuit
        .outputs()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let [l0, l1] = labels[w as usize].expect("validated circuit");
            [output_digest(&l0, i), output_digest(&l1, i)]
        })
        .collect();
    let evaluator_pairs = circuit
        .evaluator_inputs()
        .iter()
        .map(|&w| labels[w as usize].expect("input wire"))
        .collect();

    Ok((
        GarbledCircuit {
            tables,
            garbler_labels,
            output_decoding,
        },
        evaluator_pairs,
    ))
}

/// Evaluates a garbled circuit given one label per evaluator input wire and
/// decodes the outputs.
pub fn evaluate(
    circuit: &BooleanCircuit,
    gc: &GarbledCircuit,
    evaluator_labels: &[WireLabel],
) -> Result<Vec<bool>> {
    check_len(circuit.evaluator_inputs().len(), evaluator_labels.len())?;
    if gc.garbler_labels.len() != circuit.garbler_inputs().len()
        || gc.tables.len() != circuit.table_count()
        || gc.output_decoding.len() != circuit.outputs().len()
    {
        return Err(CompareError::DecodeFailure);
    }
    let mut wires: Vec<Option<WireLabel>> = vec![None; circuit.n_wires() as usize];
    for (&w, l) in circuit.garbler_inputs().iter().zip(&gc.garbler_labels) {
        wires[w as usize] = Some(*l);
    }
    for (&w, l) in circuit.evaluator_inputs().iter().zip(evaluator_labels) {
        wires[w as usize] = Some(*l);
    }

    let mut tables = gc.tables.iter();
    for (index, gate) in circuit.gates().iter().enumerate() {
        let a = wires[gate.a as usize].expect("validated circuit");
        if gate.kind == GateKind::Not {
            wires[gate.out as usize] = Some(a);
            continue;
        }
        let b = wires[gate.b as usize].expect("validated circuit");
        let table = tables.next().expect("table count checked");
        let row = 2 * usize::from(a.permute_bit()) + usize::from(b.permute_bit());
        wires[gate.out as usize] = Some(WireLabel(table.0[row]).xor(&row_key(&a, &b, index)));
    }

    circuit
        .outputs()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let digest = output_digest(&wires[w as usize].expect("validated circuit"), i);
            match gc.output_decoding[i] {
                [zero, _] if zero == digest => Ok(false),
                [_, one] if one == digest => Ok(true),
                _ => Err(CompareError::DecodeFailure),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::circuit::{build_equality_circuit, to_bits, Gate};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn run(width: u32, x: u128, y: u128, rng: &mut ChaCha20Rng) -> Result<bool> {
        let c = build_equality_circuit(width)?;
        let (gc, pairs) = garble(&c, &to_bits(x, width), rng)?;
        let labels: Vec<WireLabel> = pairs
            .iter()
            .zip(to_bits(y, width))
            .map(|(p, bit)| p[usize::from(bit)])
            .collect();
        Ok(evaluate(&c, &gc, &labels)?[0])
    }

    #[test]
    fn label_pairs_differ() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let [a, b] = WireLabel::pair(&mut rng);
            assert_ne!(a, b);
            assert_ne!(a.permute_bit(), b.permute_bit());
        }
    }

    #[test]
    fn garbled_matches_plain_for_every_gate_kind() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for kind in [GateKind::Xor, GateKind::And, GateKind::Or, GateKind::Not] {
            let gate = Gate { kind, a: 0, b: if kind == GateKind::Not { 0 } else { 1 }, out: 2 };
            let c = BooleanCircuit::new(3, vec![0], vec![1], vec![gate], vec![2]).unwrap();
            for x in [false, true] {
                for y in [false, true] {
                    let (gc, pairs) = garble(&c, &[x], &mut rng).unwrap();
                    let out = evaluate(&c, &gc, &[pairs[0][usize::from(y)]]).unwrap();
                    assert_eq!(out, c.eval_plain(&[x], &[y]).unwrap(), "{kind:?} {x} {y}");
                }
            }
        }
    }

    #[test]
    fn equality_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert!(run(8, 0, 0, &mut rng).unwrap());
        assert!(!run(8, 5, 9, &mut rng).unwrap());
        for _ in 0..1000 {
            let x = rng.gen::<u64>() as u128;
            let y = if rng.gen() { x } else { rng.gen::<u64>() as u128 };
            assert_eq!(run(64, x, y, &mut rng).unwrap(), x == y);
        }
    }

    #[test]
    fn garbling_is_randomized() {
        let c = build_equality_circuit(8).unwrap();
        let mut r1 = ChaCha20Rng::seed_from_u64(10);
        let mut r2 = ChaCha20Rng::seed_from_u64(11);
        let (g1, p1) = garble(&c, &to_bits(7, 8), &mut r1).unwrap();
        let (g2, p2) = garble(&c, &to_bits(7, 8), &mut r2).unwrap();
        assert_ne!(g1.tables, g2.tables);
        assert_ne!(p1, p2);
        for (gc, pairs) in [(&g1, &p1), (&g2, &p2)] {
            let labels: Vec<_> = pairs.iter().zip(to_bits(7, 8)).map(|(p, b)| p[usize::from(b)]).collect();
            assert!(evaluate(&c, gc, &labels).unwrap()[0]);
        }
    }

    #[test]
    fn wrong_garbler_input_length() {
        let c = build_equality_circuit(8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        assert_eq!(
            garble(&c, &[true; 7], &mut rng).unwrap_err(),
            CompareError::InputLengthMismatch { expected: 8, found: 7 }
        );
    }

    #[test]
    fn tampered_table_fails_to_decode() {
        let c = build_equality_circuit(8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (mut gc, pairs) = garble(&c, &to_bits(3, 8), &mut rng).unwrap();
        let last = gc.tables.last_mut().unwrap();
        for row in last.0.iter_mut() {
            row[0] ^= 0x80;
        }
        let labels: Vec<_> = pairs.iter().zip(to_bits(3, 8)).map(|(p, b)| p[usize::from(b)]).collect();
        assert_eq!(evaluate(&c, &gc, &labels), Err(CompareError::DecodeFailure));
    }

    #[test]
    fn foreign_labels_fail_to_decode() {
        let c = build_equality_circuit(8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let (gc, _) = garble(&c, &to_bits(3, 8), &mut rng).unwrap();
        let (_, other) = garble(&c, &to_bits(3, 8), &mut rng).unwrap();
        let labels: Vec<_> = other.iter().map(|p| p[0]).collect();
        assert_eq!(evaluate(&c, &gc, &labels), Err(CompareError::DecodeFailure));
    }
}
