//! Travel-time arithmetic.
//!
//! Every cost in this crate is an integer number of **deciseconds** of travel
//! time. Integer costs keep scheduler comparisons exact: two schedulers that
//! agree on the optimum agree bit-for-bit, and ties can be broken
//! deterministically. Unreachable pairs are represented by [`INFINITE`], which
//! is absorbing under [`saturating_add`] and fails every `<=` budget check.

/// Travel time in deciseconds.
pub type Cost = u64;

/// Sentinel for "unreachable" / "no budget can cover this".
///
/// `INFINITE` saturates under addition and compares greater than any real
/// cost, so a schedule containing an unreachable leg fails every constraint.
pub const INFINITE: Cost = u64::MAX;

/// Adds two costs, staying at [`INFINITE`] once either side is infinite.
#[inline]
pub fn saturating_add(a: Cost, b: Cost) -> Cost {
    a.saturating_add(b)
}

/// Remaining budget after consuming `consumed`, `None` when overdrawn.
///
/// An [`INFINITE`] budget is never overdrawn.
#[inline]
pub fn sub_budget(budget: Cost, consumed: Cost) -> Option<Cost> {
    if budget == INFINITE {
        Some(INFINITE)
    } else {
        budget.checked_sub(consumed)
    }
}

/// Detour allowances are expressed in basis points: 2_000 = 20% extra.
pub const BASIS_POINTS: u64 = 10_000;

/// Maximum ride time for a trip with shortest distance `direct` and a detour
/// allowance of `detour_bp` basis points, rounded down to a whole decisecond.
///
/// The ride-time constraint `d_T(s,e) <= (1+eps) * d(s,e)` is equivalent to
/// comparing against this floor because `d_T` is integral.
#[inline]
pub fn service_budget(direct: Cost, detour_bp: u32) -> Cost {
    if direct == INFINITE {
        return INFINITE;
    }
    // direct is far below 2^44 in practice; the product fits u64 comfortably.
    direct * (BASIS_POINTS + detour_bp as u64) / BASIS_POINTS
}
