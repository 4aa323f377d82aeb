//! Netpbm graymap (P2/P5) images, disparity maps as P2 with 255 = invalid,
//! and depth maps as whitespace-separated text grids.

use super::{DepthMap, DisparityMap, GrayImage, StereoError};

/// Disparity sentinel for invalid pixels.
pub const INVALID_DISPARITY: u16 = 255;

fn err(msg: impl Into<String>) -> StereoError {
    StereoError::Parse(msg.into())
}

/// Splits a PGM header into tokens, skipping `#` comments. Returns the
/// tokens and the byte offset just past the single whitespace that follows
/// the last header token.
fn header(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize), StereoError> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(err("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    Ok((tokens, (i + 1).min(bytes.len())))
}

fn parse_usize(tok: &str, what: &str) -> Result<usize, StereoError> {
    tok.parse().map_err(|_| err(format!("bad {what} `{tok}`")))
}

/// Reads an 8-bit P2 or P5 graymap. Samples are kept as stored.
pub fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, StereoError> {
    let (tokens, offset) = header(bytes, 4)?;
    let width = parse_usize(&tokens[1], "width")?;
    let height = parse_usize(&tokens[2], "height")?;
    let maxval = parse_usize(&tokens[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(err(format!("maxval {maxval} is not 8-bit")));
    }
    let n = width * height;
    let data = match tokens[0].as_str() {
        "P5" => {
            let body = bytes.get(offset..offset + n).ok_or_else(|| err("truncated P5 data"))?;
            body.to_vec()
        }
        "P2" => {
            let text =
                std::str::from_utf8(&bytes[offset.min(bytes.len())..]).map_err(|_| err("P2 body is not text"))?;
            let values = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .flat_map(str::split_whitespace)
                .map(|t| parse_usize(t, "sample"))
                .collect::<Result<Vec<_>, _>>()?;
            if values.len() != n {
                return Err(err(format!("expected {n} samples, got {}", values.len())));
            }
            values.into_iter().map(|v| v as u8).collect()
        }
        other => return Err(err(format!("unsupported magic `{other}`"))),
    };
    if data.iter().any(|&v| v as usize > maxval) {
        return Err(err("sample exceeds maxval"));
    }
    GrayImage::new(width, height, data)
}

pub fn format_pgm_p5(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn format_pgm_p2(img: &GrayImage) -> String {
    let mut s = format!("P2\n{} {}\n255\n", img.width(), img.height());
    for row in img.data().chunks(img.width()) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

/// Disparities above 254 cannot be represented next to the sentinel.
pub fn format_disparity_pgm(map: &DisparityMap) -> Result<String, StereoError> {
    let data = map
        .data
        .iter()
        .map(|d| match d {
            Some(v) if *v < INVALID_DISPARITY => Ok(*v as u8),
            Some(v) => Err(err(format!("disparity {v} does not fit the P2 encoding"))),
            None => Ok(INVALID_DISPARITY as u8),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    Ok(format_pgm_p2(&GrayImage::new(map.width, map.height, data)?))
}

pub fn parse_disparity_pgm(bytes: &[u8], d_max: usize) -> Result<DisparityMap, StereoError> {
    let img = parse_pgm(bytes)?;
    let data = img
        .data()
        .iter()
        .map(|&v| (v as u16 != INVALID_DISPARITY).then_some(v as u16))
        .collect();
    Ok(DisparityMap {
        width: img.width(),
        height: img.height(),
        d_max,
        data,
    })
}

/// One text row per image row; invalid pixels are `nan`.
pub fn format_depth_grid(map: &DepthMap) -> String {
    let mut s = String::new();
    for row in map.data.chunks(map.width) {
        let line: Vec<String> = row
            .iter()
            .map(|z| z.map_or_else(|| "nan".to_string(), |z| format!("{z}")))
            .collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_depth_grid(text: &str) -> Result<DepthMap, StereoError> {
    let mut width = None;
    let mut data = Vec::new();
    let mut height = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|t| {
                let v: f64 = t.parse().map_err(|_| err(format!("bad depth `{t}`")))?;
                Ok(if v.is_nan() { None } else { Some(v) })
            })
            .collect::<Result<Vec<_>, StereoError>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => return Err(err(format!("ragged row {}", height + 1))),
            _ => {}
        }
        data.extend(row);
        height += 1;
    }
    let width = width.ok_or_else(|| err("empty depth grid"))?;
    Ok(DepthMap { width, height, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_and_p2_round_trip() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 40 + y * 7) as u8).unwrap();
        assert_eq!(parse_pgm(&format_pgm_p5(&img)).unwrap(), img);
        assert_eq!(parse_pgm(format_pgm_p2(&img).as_bytes()).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let text = "P2\n# a comment\n2 1 # trailing\n255\n3 4\n";
        let img = parse_pgm(text.as_bytes()).unwrap();
        assert_eq!(img.data(), &[3, 4]);
    }

    #[test]
    fn malformed_pgm_rejected() {
        assert!(parse_pgm(b"P6\n1 1\n255\n\0").is_err());
        assert!(parse_pgm(b"P2\n2 1\n255\n1\n").is_err());
        assert!(parse_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(parse_pgm(b"P2\n1 1\n10\n11\n").is_err());
    }

    #[test]
    fn disparity_sentinel() {
        let map = DisparityMap {
            width: 3,
            height: 1,
            d_max: 32,
            data: vec![Some(0), None, Some(31)],
        };
        let text = format_disparity_pgm(&map).unwrap();
        assert!(text.ends_with("0 255 31\n"));
        assert_eq!(parse_disparity_pgm(text.as_bytes(), 32).unwrap(), map);
        let bad = DisparityMap {
            data: vec![Some(255), None, None],
            ..map
        };
        assert!(format_disparity_pgm(&bad).is_err());
    }

    #[test]
    fn depth_grid_round_trip() {
        let map = DepthMap {
            width: 2,
            height: 2,
            data: vec![Some(0.5), None, Some(1.25), Some(2.0)],
        };
        let text = format_depth_grid(&map);
        assert_eq!(text, "0.5 nan\n1.25 2\n");
        assert_eq!(parse_depth_grid(&text).unwrap(), map);
        assert!(parse_depth_grid("1 2\n3\n").is_err());
    }
}
