//! Element symbols and the committed valence table.

const SYMBOLS: &[&str] = &[
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S", "Cl",
    "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As",
    "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In",
    "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd", "Tb",
    "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl",
    "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk",
    "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh",
    "Fl", "Mc", "Lv", "Ts", "Og",
];

/// Atomic number of a standard-capitalized symbol.
pub(crate) fn atomic_number(symbol: &str) -> Option<u8> {
    SYMBOLS.iter().position(|s| *s == symbol).map(|i| i as u8 + 1)
}

/// Symbols that may appear outside brackets.
pub(crate) const ORGANIC: &[&str] = &["B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"];

/// Elements that may be written aromatic (lowercase) outside brackets.
pub(crate) const AROMATIC_ORGANIC: &[&str] = &["B", "C", "N", "O", "P", "S"];

/// Additional aromatic symbols accepted inside brackets.
pub(crate) const AROMATIC_BRACKET: &[&str] = &["B", "C", "N", "O", "P", "S", "Se", "As", "Te"];

/// Allowed valences for a neutral element, `None` when unchecked.
fn neutral_valences(symbol: &str) -> Option<&'static [u32]> {
    Some(match symbol {
        "B" | "Al" => &[3],
        "C" | "Si" | "Ge" => &[4],
        "N" => &[3],
        "P" | "As" | "Sb" => &[3, 5],
        "O" => &[2],
        "S" | "Se" | "Te" => &[2, 4, 6],
        "F" | "Cl" | "Br" => &[1],
        "I" => &[1, 3, 5],
        "He" | "Ne" | "Ar" | "Kr" | "Xe" => &[0],
        _ => return None,
    })
}

/// Main-group column (13..=18) of the checked elements.
fn group(symbol: &str) -> Option<(i32, u8)> {
    // (group, period)
    Some(match symbol {
        "B" => (13, 2),
        "C" => (14, 2),
        "N" => (15, 2),
        "O" => (16, 2),
        "F" => (17, 2),
        "Ne" => (18, 2),
        "Al" => (13, 3),
        "Si" => (14, 3),
        "P" => (15, 3),
        "S" => (16, 3),
        "Cl" => (17, 3),
        "Ar" => (18, 3),
        "Ge" => (14, 4),
        "As" => (15, 4),
        "Se" => (16, 4),
        "Br" => (17, 4),
        "Kr" => (18, 4),
        "Sb" => (15, 5),
        "Te" => (16, 5),
        "I" => (17, 5),
        "Xe" => (18, 5),
        _ => return None,
    })
}

fn symbol_at(group: i32, period: u8) -> Option<&'static str> {
    Some(match (group, period) {
        (13, 2) => "B",
        (14, 2) => "C",
        (15, 2) => "N",
        (16, 2) => "O",
        (17, 2) => "F",
        (18, 2) => "Ne",
        (13, 3) => "Al",
        (14, 3) => "Si",
        (15, 3) => "P",
        (16, 3) => "S",
        (17, 3) => "Cl",
        (18, 3) => "Ar",
        (14, 4) => "Ge",
        (15, 4) => "As",
        (16, 4) => "Se",
        (17, 4) => "Br",
        (18, 4) => "Kr",
        (15, 5) => "Sb",
        (16, 5) => "Te",
        (17, 5) => "I",
        (18, 5) => "Xe",
        _ => return None,
    })
}

/// Allowed valences with a formal charge applied. A charged atom takes the
/// valences of its isoelectronic neighbour in the same period (N+ like C,
/// O- like F, C- like N). Elements outside the table are trusted.
pub(crate) fn allowed_valences(symbol: &str, charge: i8) -> Option<&'static [u32]> {
    if charge == 0 {
        return neutral_valences(symbol);
    }
    let (g, period) = group(symbol)?;
    // C+ and B+ lose a bond rather than gaining one.
    match (g, charge) {
        (14, 1) => return Some(&[3]),
        (13, 1) => return Some(&[2]),
        _ => {}
    }
    let shifted = g - charge as i32;
    if shifted > 18 {
        return Some(&[0]);
    }
    neutral_valences(symbol_at(shifted, period)?)
}
