//! 5x7 monochrome bitmap font for grid labels.

const fn g(rows: [u8; 7]) -> [u8; 7] {
    rows
}

/// Rows top to bottom, bit 4 is the leftmost column.
pub(crate) fn glyph(ch: char) -> [u8; 7] {
    match ch.to_ascii_uppercase() {
        'A' => g([0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
        'B' => g([0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]),
        'C' => g([0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E]),
        'D' => g([0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C]),
        'E' => g([0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
        'F' => g([0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10]),
        'G' => g([0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F]),
        'H' => g([0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
        'I' => g([0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]),
        'J' => g([0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C]),
        'K' => g([0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
        'L' => g([0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
        'M' => g([0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
        'N' => g([0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11]),
        'O' => g([0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
        'P' => g([0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10]),
        'Q' => g([0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D]),
        'R' => g([0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
        'S' => g([0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]),
        'T' => g([0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
        'U' => g([0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
        'V' => g([0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04]),
        'W' => g([0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A]),
        'X' => g([0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
        'Y' => g([0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04]),
        'Z' => g([0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F]),
        '0' => g([0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
        '1' => g([0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
        '2' => g([0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
        '3' => g([0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
        '4' => g([0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
        '5' => g([0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
        '6' => g([0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
        '7' => g([0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
        '8' => g([0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
        '9' => g([0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
        ':' => g([0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00]),
        '.' => g([0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C]),
        ',' => g([0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08]),
        '-' => g([0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00]),
        '+' => g([0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00]),
        '_' => g([0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F]),
        '(' => g([0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02]),
        ')' => g([0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08]),
        '/' => g([0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00]),
        '#' => g([0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A]),
        '=' => g([0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00]),
        ' ' => g([0; 7]),
        _ => g([0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04]),
    }
}

pub(crate) const GLYPH_WIDTH: u32 = 5;
pub(crate) const GLYPH_HEIGHT: u32 = 7;
pub(crate) const GLYPH_ADVANCE: u32 = 6;
