//! Deliberate fault injection for the verification harness.
//!
//! `verify --mutate <fault>` flips a single backward rule at runtime to
//! demonstrate that the gradient checks actually catch broken derivatives.
//! Production paths never set a fault.

use std::sync::atomic::{AtomicU8, Ordering};

static ACTIVE: AtomicU8 = AtomicU8::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Negates the sigmoid backward rule.
    SigmoidBackwardSign,
    /// Drops the second operand's gradient in elementwise multiply.
    MulBackwardDropRhs,
}

pub fn set(fault: Fault) {
    let code = match fault {
        Fault::None => 0,
        Fault::SigmoidBackwardSign => 1,
        Fault::MulBackwardDropRhs => 2,
    };
    ACTIVE.store(code, Ordering::SeqCst);
}

pub fn active() -> Fault {
    match ACTIVE.load(Ordering::Relaxed) {
        1 => Fault::SigmoidBackwardSign,
        2 => Fault::MulBackwardDropRhs,
        _ => Fault::None,
    }
}

pub fn parse(name: &str) -> Option<Fault> {
    match name {
        "sigmoid-backward-sign" => Some(Fault::SigmoidBackwardSign),
        "mul-backward-drop-rhs" => Some(Fault::MulBackwardDropRhs),
        _ => None,
    }
}

pub const KNOWN: &[&str] = &["sigmoid-backward-sign", "mul-backward-drop-rhs"];
