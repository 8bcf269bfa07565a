use std::fs;
use std::path::Path;

use super::grid::{Cell, Family, GridTask, InitMode};
use super::EnvError;

/// Serializes a task to the line-oriented task file format.
pub fn task_to_string(task: &GridTask) -> String {
    let mut out = String::new();
    out.push_str(&format!("family = {}\n", task.family));
    out.push_str(&format!("width = {}\n", task.width));
    out.push_str(&format!("height = {}\n", task.height));
    out.push_str(&format!("difficulty = {:?}\n", task.difficulty));
    out.push_str(&format!("seed = {}\n", task.seed));
    out.push_str(&format!("task_id = {}\n", task.task_id));
    out.push_str(&format!("init_mode = {}\n", task.init_mode));
    out.push_str("cells =\n");
    out.push_str(&task.render());
    out
}

fn parse_err(line: usize, field: &str, msg: impl Into<String>) -> EnvError {
    EnvError::Parse {
        line,
        field: field.to_string(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, field: &str, v: &str) -> Result<T, EnvError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| parse_err(line, field, e.to_string()))
}

pub fn task_from_str(text: &str) -> Result<GridTask, EnvError> {
    let mut family = None;
    let mut width = None;
    let mut height = None;
    let mut difficulty = None;
    let mut seed = None;
    let mut task_id = None;
    let mut init_mode = InitMode::AllNonterminal;
    let mut rows: Vec<(usize, &str)> = Vec::new();
    let mut in_cells = false;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end();
        if in_cells {
            if !line.is_empty() {
                rows.push((lineno, line));
            }
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, "", "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "family" => {
                family = Some(
                    value
                        .parse::<Family>()
                        .map_err(|e| parse_err(lineno, key, e.to_string()))?,
                )
            }
            "width" => width = Some(parse_num::<usize>(lineno, key, value)?),
            "height" => height = Some(parse_num::<usize>(lineno, key, value)?),
            "difficulty" => difficulty = Some(parse_num::<f64>(lineno, key, value)?),
            "seed" => seed = Some(parse_num::<u64>(lineno, key, value)?),
            "task_id" => task_id = Some(parse_num::<u64>(lineno, key, value)?),
            "init_mode" => {
                init_mode = value
                    .parse()
                    .map_err(|e: EnvError| parse_err(lineno, key, e.to_string()))?
            }
            "cells" => {
                if !value.is_empty() {
                    return Err(parse_err(lineno, key, "rows must start on the next line"));
                }
                in_cells = true;
            }
            other => return Err(parse_err(lineno, other, "unknown field")),
        }
    }

    let end = text.lines().count();
    let family = family.ok_or_else(|| parse_err(end, "family", "missing"))?;
    let width = width.ok_or_else(|| parse_err(end, "width", "missing"))?;
    let height = height.ok_or_else(|| parse_err(end, "height", "missing"))?;
    let difficulty = difficulty.ok_or_else(|| parse_err(end, "difficulty", "missing"))?;
    let seed = seed.ok_or_else(|| parse_err(end, "seed", "missing"))?;
    if !in_cells {
        return Err(parse_err(end, "cells", "missing"));
    }
    if rows.len() != height {
        return Err(parse_err(
            end,
            "cells",
            format!("expected {height} rows, found {}", rows.len()),
        ));
    }
    let mut cells = Vec::with_capacity(width * height);
    for (lineno, row) in rows {
        if row.chars().count() != width {
            return Err(parse_err(lineno, "cells", format!("expected {width} glyphs")));
        }
        for c in row.chars() {
            cells.push(
                Cell::from_glyph(c)
                    .ok_or_else(|| parse_err(lineno, "cells", format!("unknown glyph `{c}`")))?,
            );
        }
    }
    let task = GridTask {
        family,
        width,
        height,
        cells,
        difficulty,
        seed,
        task_id: task_id.unwrap_or(seed),
        init_mode,
    };
    task.validate_layout()?;
    Ok(task)
}

pub fn save_task(task: &GridTask, path: &Path) -> Result<(), EnvError> {
    fs::write(path, task_to_string(task))?;
    Ok(())
}

pub fn load_task(path: &Path) -> Result<GridTask, EnvError> {
    task_from_str(&fs::read_to_string(path)?)
}
