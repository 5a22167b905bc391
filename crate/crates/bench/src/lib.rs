//! Deterministic workload generators shared by the benchmarks.

use dpquery_core::{Catalog, Column, DataType, RandomSource, Relation, Value};

pub const DEPARTMENTS: [&str; 6] = ["Sales", "HR", "Engineering", "Legal", "IT", "Support"];

/// `n` values uniform on `[lo, hi)`.
pub fn uniform_values(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = RandomSource::from_seed(seed);
    (0..n).map(|_| lo + (hi - lo) * rng.uniform_open()).collect()
}

/// An `Employee(uid, dept)` table with one row per user and an
/// `Order(uid, amount)` table with `orders_per_user` rows per user.
pub fn employee_catalog(users: usize, orders_per_user: usize, seed: u64) -> Catalog {
    let mut rng = RandomSource::from_seed(seed);
    let employees =
        (0..users as i64).map(|u| vec![Value::Int(u), DEPARTMENTS[rng.index(DEPARTMENTS.len())].into()]).collect();
    let orders = (0..users as i64)
        .flat_map(|u| (0..orders_per_user).map(move |_| u))
        .map(|u| vec![Value::Int(u), Value::Float(500.0 * rng.uniform_open())])
        .collect();
    let mut c = Catalog::new();
    c.insert(
        "Employee",
        Relation::owned(vec![Column::new("uid", DataType::Int), Column::new("dept", DataType::Text)], "uid", employees)
            .expect("generated employees are well formed"),
    );
    c.insert(
        "Order",
        Relation::owned(vec![Column::new("uid", DataType::Int), Column::new("amount", DataType::Float)], "uid", orders)
            .expect("generated orders are well formed"),
    );
    c
}

pub const DEPARTMENT_QUERY: &str = "SELECT WITH ANONYMIZATION dept, ANON_COUNT(*) AS users, \
    ANON_SUM(amount, 0, 1000) AS total, ANON_AVG(amount, 0, 500) AS mean \
    FROM Employee E, Order O USING (uid) GROUP BY dept";

pub const AUTO_BOUNDS_QUERY: &str = "SELECT WITH ANONYMIZATION dept, ANON_SUM(amount) AS total \
    FROM Employee E, Order O USING (uid) GROUP BY dept";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic_and_sized() {
        assert_eq!(uniform_values(100, 0.0, 1.0, 3), uniform_values(100, 0.0, 1.0, 3));
        let c = employee_catalog(50, 3, 1);
        assert_eq!(c.get("Employee").unwrap().len(), 50);
        assert_eq!(c.get("Order").unwrap().len(), 150);
    }
}
