//! Built-in 5x7 bitmap glyphs for `a-z0-9`, used by the synthetic corpus
//! renderer. Self-contained so corpus generation never depends on system
//! fonts.

pub const GLYPH_ROWS: usize = 7;
pub const GLYPH_COLS: usize = 5;

/// Rows of the glyph for `c`, `#` marking ink.
pub fn glyph(c: char) -> Option<[&'static str; GLYPH_ROWS]> {
    let g = match c {
        'a' => [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'b' => ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."],
        'c' => [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."],
        'd' => ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."],
        'e' => ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
        'f' => ["#####", "#....", "#....", "####.", "#....", "#....", "#...."],
        'g' => [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."],
        'h' => ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"],
        'i' => [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."],
        'j' => ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."],
        'k' => ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"],
        'l' => ["#....", "#....", "#....", "#....", "#....", "#....", "#####"],
        'm' => ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
        'n' => ["#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#", "#...#"],
        'o' => [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'p' => ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."],
        'q' => [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"],
        'r' => ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"],
        's' => [".####", "#....", "#....", ".###.", "....#", "....#", "####."],
        't' => ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
        'u' => ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
        'v' => ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
        'w' => ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"],
        'x' => ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
        'y' => ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."],
        'z' => ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"],
        '0' => [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
        '1' => ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
        '2' => [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
        '3' => [".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."],
        '4' => ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
        '5' => ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
        '6' => [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
        '7' => ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
        '8' => [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
        '9' => [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
        _ => return None,
    };
    Some(g)
}
