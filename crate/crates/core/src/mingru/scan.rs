/// Affine map `h -> a h + b`; composing two of them is the scan operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanElement {
    /// Decay, `1 - z_t`.
    pub a: f64,
    /// Drive, `z_t h~_t`.
    pub b: f64,
}

impl ScanElement {
    pub const IDENTITY: ScanElement = ScanElement { a: 1.0, b: 0.0 };
}

/// `first` then `second`: `(a1, b1) ∘ (a2, b2) = (a2 a1, a2 b1 + b2)`.
#[inline]
pub fn combine(first: ScanElement, second: ScanElement) -> ScanElement {
    ScanElement {
        a: second.a * first.a,
        b: second.a * first.b + second.b,
    }
}

/// In-place inclusive scan over time of `elems`, laid out `(T, lanes)`; every
/// lane is an independent sequence.
///
/// Two-phase (up-sweep, down-sweep) tree over the time axis padded to a power
/// of two with identities, then one combine per step to turn the exclusive
/// prefix into an inclusive one.
pub fn inclusive_scan(elems: &mut [ScanElement], lanes: usize) {
    if lanes == 0 || elems.is_empty() {
        return;
    }
    let t = elems.len() / lanes;
    let n = t.next_power_of_two();
    let mut tree = vec![ScanElement::IDENTITY; n * lanes];
    tree[..t * lanes].copy_from_slice(elems);

    let mut stride = 1;
    while stride < n {
        let mut right = 2 * stride - 1;
        while right < n {
            let left = right - stride;
            for c in 0..lanes {
                tree[right * lanes + c] = combine(tree[left * lanes + c], tree[right * lanes + c]);
            }
            right += 2 * stride;
        }
        stride *= 2;
    }

    for c in 0..lanes {
        tree[(n - 1) * lanes + c] = ScanElement::IDENTITY;
    }
    let mut stride = n / 2;
    while stride >= 1 {
        let mut right = 2 * stride - 1;
        while right < n {
            let left = right - stride;
            for c in 0..lanes {
                let left_sum = tree[left * lanes + c];
                let prefix = tree[right * lanes + c];
                tree[left * lanes + c] = prefix;
                tree[right * lanes + c] = combine(prefix, left_sum);
            }
            right += 2 * stride;
        }
        stride /= 2;
    }

    for (e, p) in elems.iter_mut().zip(&tree) {
        *e = combine(*p, *e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn elem() -> impl Strategy<Value = ScanElement> {
        (0.01f64..0.99, -3.0f64..3.0).prop_map(|(a, b)| ScanElement { a, b })
    }

    proptest! {
        #[test]
        fn combine_is_associative(e1 in elem(), e2 in elem(), e3 in elem()) {
            let l = combine(combine(e1, e2), e3);
            let r = combine(e1, combine(e2, e3));
            prop_assert!((l.a - r.a).abs() < 1e-14);
            prop_assert!((l.b - r.b).abs() < 1e-13);
        }

        #[test]
        fn scan_matches_running_fold(es in prop::collection::vec(elem(), 1..70)) {
            let mut scanned = es.clone();
            inclusive_scan(&mut scanned, 1);
            let mut acc = ScanElement::IDENTITY;
            for (e, s) in es.iter().zip(&scanned) {
                acc = combine(acc, *e);
                prop_assert!((acc.a - s.a).abs() < 1e-12);
                prop_assert!((acc.b - s.b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_is_neutral() {
        let e = ScanElement { a: 0.3, b: -1.2 };
        assert_eq!(combine(ScanElement::IDENTITY, e), e);
        assert_eq!(combine(e, ScanElement::IDENTITY), e);
    }

    #[test]
    fn lanes_are_independent() {
        let mut es = vec![
            ScanElement { a: 0.5, b: 1.0 },
            ScanElement { a: 0.0, b: 7.0 },
            ScanElement { a: 0.5, b: 1.0 },
            ScanElement { a: 1.0, b: 0.0 },
        ];
        inclusive_scan(&mut es, 2);
        // lane 0: h = 1, then 0.5 + 1; lane 1: 7, then 7
        assert_eq!(es[2].b, 1.5);
        assert_eq!(es[3].b, 7.0);
    }
}
