use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
        }
    }
}

impl std::str::FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            _ => Err(Error::config(format!("unknown modulation `{s}`"))),
        }
    }
}

/// Real channel symbols of unit power per real dimension. A QPSK symbol
/// occupies two consecutive real channel uses (in-phase, quadrature).
#[derive(Clone, Debug, PartialEq)]
pub struct CodedFrame {
    pub symbols: Vec<f64>,
    pub order: Modulation,
    pub pad_bits: usize,
    pub code_rate: f64,
}

impl CodedFrame {
    pub fn channel_uses(&self) -> usize {
        self.symbols.len()
    }
}

/// BPSK maps 0 → +1, 1 → −1; QPSK applies the same map to each bit of a pair.
pub fn modulate(bits: &[u8], order: Modulation, code_rate: f64) -> CodedFrame {
    let per = order.bits_per_symbol();
    let pad_bits = (per - bits.len() % per) % per;
    let symbols = bits
        .iter()
        .chain(std::iter::repeat_n(&0u8, pad_bits))
        .map(|&b| if b & 1 == 0 { 1.0 } else { -1.0 })
        .collect();
    CodedFrame {
        symbols,
        order,
        pad_bits,
        code_rate,
    }
}

/// Hard sign decisions; padding bits are dropped.
pub fn demodulate(received: &[f64], order: Modulation, pad_bits: usize) -> Result<Vec<u8>> {
    if received.len() % order.bits_per_symbol() != 0 || pad_bits > received.len() {
        return Err(Error::dim(format!(
            "{} real samples are not whole {} symbols",
            received.len(),
            order.name()
        )));
    }
    let mut bits: Vec<u8> = received.iter().map(|&v| (v < 0.0) as u8).collect();
    bits.truncate(received.len() - pad_bits);
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bpsk_mapping() {
        let f = modulate(&[0, 1, 0], Modulation::Bpsk, 1.0);
        assert_eq!(f.symbols, vec![1.0, -1.0, 1.0]);
        assert_eq!(demodulate(&f.symbols, Modulation::Bpsk, 0).unwrap(), vec![0, 1, 0]);
    }

    #[test]
    fn qpsk_pads_and_inverts() {
        let bits = [1, 0, 1, 1, 0];
        let f = modulate(&bits, Modulation::Qpsk, 0.5);
        assert_eq!((f.channel_uses(), f.pad_bits), (6, 1));
        let power: f64 = f.symbols.iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert_eq!(power, 1.0);
        assert_eq!(demodulate(&f.symbols, Modulation::Qpsk, f.pad_bits).unwrap(), bits);
        assert!(demodulate(&f.symbols[..5], Modulation::Qpsk, 1).is_err());
    }
}
