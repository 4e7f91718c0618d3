//! Embedded 5x7 bitmap digit glyphs.
//!
//! Labels are drawn from these fixed bitmaps with nearest-neighbor scaling so
//! that renders are bit-identical on every platform; system fonts would not
//! be.

/// Glyph rows for '0'..'9'; each row holds 5 bits, MSB = leftmost column.
const DIGITS: [[u8; 7]; 10] = [
    // 0
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    // 1
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    // 2
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    // 3
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    // 4
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    // 5
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    // 6
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    // 7
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    // 8
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    // 9
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

pub const GLYPH_WIDTH: u32 = 5;
pub const GLYPH_HEIGHT: u32 = 7;

/// Whether the glyph pixel at (col, row) of the source bitmap is set.
pub fn glyph_bit(digit: u8, col: u32, row: u32) -> bool {
    debug_assert!(digit < 10 && col < GLYPH_WIDTH && row < GLYPH_HEIGHT);
    let bits = DIGITS[digit as usize][row as usize];
    bits & (1 << (GLYPH_WIDTH - 1 - col)) != 0
}

/// Whether the pixel at (x, y) of a digit scaled to `w`x`h` is set
/// (nearest-neighbor, pure integer arithmetic).
pub fn scaled_bit(digit: u8, x: u32, y: u32, w: u32, h: u32) -> bool {
    debug_assert!(x < w && y < h);
    let col = x * GLYPH_WIDTH / w;
    let row = y * GLYPH_HEIGHT / h;
    glyph_bit(digit, col, row)
}
