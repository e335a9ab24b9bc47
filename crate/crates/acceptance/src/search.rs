use gridhall_core::ids::AppId;
use gridhall_core::registry::{DirectoryEntry, SearchQuery, SortColumn, SortDirection};

/// Total hits and the ids on the requested page.
pub fn search(entries: &[DirectoryEntry], q: &SearchQuery) -> (usize, Vec<AppId>) {
    let needle = q.text.trim().to_lowercase();
    let hit = |e: &DirectoryEntry| {
        let mut fields = vec![e.name.to_lowercase(), e.description.to_lowercase()];
        fields.extend(e.keywords.iter().map(|k| k.to_lowercase()));
        needle.is_empty() || fields.iter().any(|f| f.contains(&needle))
    };
    let key = |e: &DirectoryEntry| {
        let raw = match q.sort_column {
            SortColumn::Name => e.name.clone(),
            SortColumn::Description => e.description.clone(),
            SortColumn::Keywords => e.keywords.join(","),
            SortColumn::Branch => e.branch.clone(),
            SortColumn::Category => e.category.clone(),
            SortColumn::Subcategory => e.subcategory.clone(),
            SortColumn::Owner => e.owner.clone(),
        };
        (raw.to_lowercase(), e.application_id)
    };
    // Selection sort: quadratic, but obviously right.
    let mut pool: Vec<&DirectoryEntry> = entries.iter().filter(|e| hit(e)).collect();
    let mut sorted = Vec::with_capacity(pool.len());
    while !pool.is_empty() {
        let mut best = 0;
        for i in 1..pool.len() {
            let better = match q.sort_direction {
                SortDirection::Asc => key(pool[i]) < key(pool[best]),
                SortDirection::Desc => key(pool[i]) > key(pool[best]),
            };
            if better {
                best = i;
            }
        }
        sorted.push(pool.remove(best).application_id);
    }
    let total = sorted.len();
    let start = (q.page as usize - 1) * q.page_size as usize;
    let page = sorted
        .into_iter()
        .skip(start)
        .take(q.page_size as usize)
        .collect();
    (total, page)
}
