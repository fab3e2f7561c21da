//! Bank directories: `omb.bin` (and `oma.bin`, `amb.bin` when present) in
//! the binary matrix layout, `index.csv` with one `column,time,member` row
//! per residual, `window.csv` with `t_s,t_f,dt`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ResidualBank, Window};
use crate::covkit::{load_bin, save_bin};
use crate::error::{Error, Result};

pub fn save_bank(dir: &Path, bank: &ResidualBank) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_bin(&dir.join("omb.bin"), &bank.omb)?;
    for (name, m) in [("oma.bin", &bank.oma), ("amb.bin", &bank.amb)] {
        let path = dir.join(name);
        match m {
            Some(m) => save_bin(&path, m)?,
            None if path.exists() => fs::remove_file(&path)?,
            None => {}
        }
    }
    let mut idx = Vec::new();
    writeln!(idx, "column,time,member")?;
    for (j, (t, k)) in bank.tags.iter().enumerate() {
        writeln!(idx, "{j},{t:.17e},{k}")?;
    }
    fs::write(dir.join("index.csv"), idx)?;
    let w = &bank.window;
    fs::write(
        dir.join("window.csv"),
        format!("t_s,t_f,dt\n{:.17e},{:.17e},{:.17e}\n", w.t_s, w.t_f, w.dt),
    )?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad number {s:?}")))
}

pub fn load_bank(dir: &Path) -> Result<ResidualBank> {
    let omb = load_bin(&dir.join("omb.bin"))?;
    let opt = |name: &str| -> Result<_> {
        let p = dir.join(name);
        if p.exists() {
            Ok(Some(load_bin(&p)?))
        } else {
            Ok(None)
        }
    };
    let oma = opt("oma.bin")?;
    let amb = opt("amb.bin")?;
    let mut tags = Vec::new();
    for line in fs::read_to_string(dir.join("index.csv"))?.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("bad index row {line:?}")));
        }
        let member = f[2]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad member id {:?}", f[2])))?;
        tags.push((parse_f64(f[1])?, member));
    }
    let wtxt = fs::read_to_string(dir.join("window.csv"))?;
    let row = wtxt
        .lines()
        .nth(1)
        .ok_or_else(|| Error::Format("window.csv has no data row".into()))?;
    let w: Vec<f64> = row.split(',').map(parse_f64).collect::<Result<_>>()?;
    if w.len() != 3 {
        return Err(Error::Format("window.csv needs t_s,t_f,dt".into()));
    }
    let window = Window {
        t_s: w[0],
        t_f: w[1],
        dt: w[2],
    };
    ResidualBank::new(window, omb, oma, amb, tags)
}
